//! The reward model: oracle consistency confidence, relative-pose
//! estimation, anchor fidelity and the two hackable baseline verifiers.

pub mod confidence;
pub mod features;
pub mod perceptual;
pub mod photometric;
pub mod pose;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use confidence::{photoconsistency_confidence, ConfidenceParams};
pub use features::{estimate_relative_poses, sfm_reward, FeatureParams, PoseEstimate};
pub use perceptual::{anchor_reward, perceptual_distance};
pub use photometric::{ph_loss, warp_reward};
pub use pose::{pose_reward, DEGENERATE_PAIR_PENALTY};

use crate::error::VerifierError;

/// Per-pixel confidence in `(0, 1]` with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl ConfidenceMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Self {
        assert_eq!(values.len(), width * height);
        assert_eq!(valid.len(), width * height);
        ConfidenceMap {
            width,
            height,
            values,
            valid,
        }
    }

    /// Map with every pixel valid at the same value.
    pub fn constant(width: usize, height: usize, v: f64) -> Self {
        Self::new(width, height, vec![v; width * height], vec![true; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Mean over valid pixels, `None` when no pixel is valid.
    pub fn mean(&self) -> Option<f64> {
        let (s, n) = self
            .values
            .iter()
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
        (n > 0).then(|| s / n as f64)
    }

    /// Values with invalid pixels zeroed, for export as a heatmap.
    pub fn masked_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.valid)
            .map(|(v, ok)| if *ok { *v } else { 0.0 })
            .collect()
    }
}

/// Mean of per-view confidence means. Views without valid pixels count as 0
/// and are reported through the returned flag.
pub fn mean_confidence(maps: &[ConfidenceMap]) -> (f64, bool) {
    if maps.is_empty() {
        return (0.0, true);
    }
    let mut empty = false;
    let s: f64 = maps
        .iter()
        .map(|m| {
            m.mean().unwrap_or_else(|| {
                empty = true;
                0.0
            })
        })
        .sum();
    (s / maps.len() as f64, empty)
}

/// Geometric rewards `(r_D, r_P)` and whether any view had no valid pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricRewards {
    pub r_d: f64,
    pub r_p: f64,
    pub empty_valid_set: bool,
}

pub fn geometric_rewards(conf_depth: &[ConfidenceMap], conf_point: &[ConfidenceMap]) -> GeometricRewards {
    let (r_d, e1) = mean_confidence(conf_depth);
    let (r_p, e2) = mean_confidence(conf_point);
    GeometricRewards {
        r_d,
        r_p,
        empty_valid_set: e1 || e2,
    }
}

/// Image statistics of a view set used to watch for degenerate outputs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub texture_energy: f64,
    pub high_frequency_energy: f64,
}

impl Diagnostics {
    pub fn of_images<'a>(images: impl IntoIterator<Item = &'a crate::image::Image>) -> Self {
        let (mut t, mut h, mut n) = (0.0, 0.0, 0usize);
        for img in images {
            t += img.texture_energy();
            h += img.high_frequency_energy();
            n += 1;
        }
        let n = n.max(1) as f64;
        Diagnostics {
            texture_energy: t / n,
            high_frequency_energy: h / n,
        }
    }
}

/// Everything the reward model says about one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifierReport {
    pub conf_depth: Vec<ConfidenceMap>,
    pub conf_point: Vec<ConfidenceMap>,
    pub est_relative: Vec<PoseEstimate>,
    pub diagnostics: Diagnostics,
}

/// Mixing weights of the composite reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub w_d: f64,
    pub w_p: f64,
    pub w_t: f64,
    pub w_a: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            w_d: 0.25,
            w_p: 0.25,
            w_t: 0.25,
            w_a: 0.25,
        }
    }
}

impl Weights {
    pub fn is_valid(&self) -> bool {
        [self.w_d, self.w_p, self.w_t, self.w_a]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Weights {
            w_d: self.w_d * s,
            w_p: self.w_p * s,
            w_t: self.w_t * s,
            w_a: self.w_a * s,
        }
    }
}

/// The four reward terms and their weighted combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_d: f64,
    pub r_p: f64,
    pub r_t: f64,
    pub r_a: f64,
    pub composite: f64,
}

impl RewardBreakdown {
    pub fn new(r_d: f64, r_p: f64, r_t: f64, r_a: f64, weights: &Weights) -> Self {
        RewardBreakdown {
            r_d,
            r_p,
            r_t,
            r_a,
            composite: composite_reward(r_d, r_p, r_t, r_a, weights),
        }
    }
}

pub fn composite_reward(r_d: f64, r_p: f64, r_t: f64, r_a: f64, w: &Weights) -> f64 {
    w.w_d * r_d + w.w_p * r_p + w.w_t * r_t + w.w_a * r_a
}

/// Header of the per-candidate record stream.
pub const RECORD_HEADER: &str =
    "run_id,iteration,member,r_d,r_p,r_t,r_a,composite,texture_energy,high_frequency_energy";

/// One line of the per-candidate reward log.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardRecord {
    pub run_id: String,
    pub iteration: usize,
    pub member: usize,
    pub reward: RewardBreakdown,
    pub diagnostics: Diagnostics,
}

impl fmt::Display for RewardRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.reward;
        write!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.iteration,
            self.member,
            r.r_d,
            r.r_p,
            r.r_t,
            r.r_a,
            r.composite,
            self.diagnostics.texture_energy,
            self.diagnostics.high_frequency_energy
        )
    }
}

impl RewardRecord {
    pub fn parse(line: &str) -> Result<Self, VerifierError> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 10 {
            return Err(VerifierError::LengthMismatch(f.len(), 10));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| VerifierError::LengthMismatch(0, 10));
        let int = |s: &str| s.parse::<usize>().map_err(|_| VerifierError::LengthMismatch(0, 10));
        Ok(RewardRecord {
            run_id: f[0].to_string(),
            iteration: int(f[1])?,
            member: int(f[2])?,
            reward: RewardBreakdown {
                r_d: num(f[3])?,
                r_p: num(f[4])?,
                r_t: num(f[5])?,
                r_a: num(f[6])?,
                composite: num(f[7])?,
            },
            diagnostics: Diagnostics {
                texture_energy: num(f[8])?,
                high_frequency_energy: num(f[9])?,
            },
        })
    }
}
