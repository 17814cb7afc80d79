//! Diagonal-Gaussian editor policy over flattened edit actions.
//!
//! The action vector `x` is laid out as
//!
//! ```text
//! shared (7)            color_delta[3] ‖ translation_delta[3] ‖ log radius scale
//! per view m (12·M)     translation_jitter[3] ‖ color_jitter[3] ‖ camera_rot_jitter[3] ‖ camera_trans_jitter[3]
//! global degradation (2) contrast loss ‖ blur, added to every view's own
//! degradation (2·M)     contrast loss ‖ blur
//! ```
//!
//! The global degradation pair lets the policy explore blurring or flattening
//! all views together; independent per-view draws almost never do, and a
//! single degraded view only disagrees more with its neighbors.
//!
//! Each coordinate is multiplied by its [`DecodeScales`] entry when decoded;
//! the zero vector decodes to the identity edit. Clamps (radius scale,
//! contrast, blur) are applied at decode time only, so densities stay exact.

use std::io::{BufRead, Write};

use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::edit::{Degradation, EditVector, PerViewDeviation, SharedEdit, MAX_RADIUS_SCALE, MIN_RADIUS_SCALE};
use crate::error::PolicyError;

pub const SHARED_DIM: usize = 7;
pub const DEVIATION_DIM: usize = 12;
pub const DEGRADATION_DIM: usize = 2;
pub const GLOBAL_DEGRADATION_DIM: usize = 2;
pub const LAYOUT_VERSION: u32 = 2;

/// Action dimension for `m_views` views.
pub fn action_dim(m_views: usize) -> usize {
    SHARED_DIM + m_views * (DEVIATION_DIM + DEGRADATION_DIM) + GLOBAL_DEGRADATION_DIM
}

pub const MIN_LOG_STD: f64 = -6.0;
pub const MAX_LOG_STD: f64 = 2.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Scene units (or radians, or pixels) per unit of action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeScales {
    pub color: f64,
    pub translation: f64,
    pub log_radius: f64,
    pub jitter_translation: f64,
    pub jitter_color: f64,
    pub camera_rotation: f64,
    pub camera_translation: f64,
    pub contrast: f64,
    pub blur: f64,
}

impl Default for DecodeScales {
    fn default() -> Self {
        DecodeScales {
            color: 0.5,
            translation: 0.5,
            log_radius: 0.5,
            jitter_translation: 0.1,
            jitter_color: 0.1,
            camera_rotation: 0.02,
            camera_translation: 0.05,
            contrast: 2.0,
            blur: 2.0,
        }
    }
}

/// Maps action vectors to edits for a rig of `m_views` views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub m_views: usize,
    pub target: u32,
    pub scales: DecodeScales,
}

impl Layout {
    pub fn new(m_views: usize, target: u32, scales: DecodeScales) -> Self {
        Layout {
            m_views,
            target,
            scales,
        }
    }

    pub fn dim(&self) -> usize {
        action_dim(self.m_views)
    }

    fn deviation_offset(&self, m: usize) -> usize {
        SHARED_DIM + m * DEVIATION_DIM
    }

    fn degradation_offset(&self, m: usize) -> usize {
        self.global_degradation_offset() + GLOBAL_DEGRADATION_DIM + m * DEGRADATION_DIM
    }

    fn global_degradation_offset(&self) -> usize {
        SHARED_DIM + self.m_views * DEVIATION_DIM
    }

    /// Whether coordinate `i` belongs to a degradation block.
    pub fn is_degradation(&self, i: usize) -> bool {
        i >= SHARED_DIM + self.m_views * DEVIATION_DIM
    }

    pub fn decode(&self, x: &[f64]) -> Result<EditVector, PolicyError> {
        self.check(x.len())?;
        let s = &self.scales;
        let v3 = |o: usize, k: f64| [x[o] * k, x[o + 1] * k, x[o + 2] * k];
        let shared = SharedEdit {
            target: self.target,
            color_delta: v3(0, s.color),
            translation_delta: v3(3, s.translation),
            radius_scale: (x[6] * s.log_radius).exp().clamp(MIN_RADIUS_SCALE, MAX_RADIUS_SCALE),
        };
        let per_view = (0..self.m_views)
            .map(|m| {
                let o = self.deviation_offset(m);
                PerViewDeviation {
                    translation_jitter: v3(o, s.jitter_translation),
                    color_jitter: v3(o + 3, s.jitter_color),
                    camera_rot_jitter: v3(o + 6, s.camera_rotation),
                    camera_trans_jitter: v3(o + 9, s.camera_translation),
                }
            })
            .collect();
        let g = self.global_degradation_offset();
        let degradation = (0..self.m_views)
            .map(|m| {
                let o = self.degradation_offset(m);
                Degradation {
                    contrast: (1.0 - (x[g] + x[o]) * s.contrast).clamp(0.0, 1.0),
                    blur_sigma: ((x[g + 1] + x[o + 1]) * s.blur).max(0.0),
                }
            })
            .collect();
        Ok(EditVector {
            shared,
            per_view,
            degradation,
        })
    }

    /// Inverse of [`Layout::decode`] for in-range edits, with the global
    /// degradation left at zero.
    pub fn encode(&self, e: &EditVector) -> Result<Vec<f64>, PolicyError> {
        if e.views() != self.m_views || e.degradation.len() != self.m_views {
            return Err(PolicyError::DimensionMismatch {
                expected: self.m_views,
                actual: e.views(),
            });
        }
        let s = &self.scales;
        let mut x = vec![0.0; self.dim()];
        let put = |x: &mut [f64], o: usize, v: &[f64; 3], k: f64| {
            for i in 0..3 {
                x[o + i] = v[i] / k;
            }
        };
        put(&mut x, 0, &e.shared.color_delta, s.color);
        put(&mut x, 3, &e.shared.translation_delta, s.translation);
        x[6] = e.shared.radius_scale.ln() / s.log_radius;
        for (m, d) in e.per_view.iter().enumerate() {
            let o = self.deviation_offset(m);
            put(&mut x, o, &d.translation_jitter, s.jitter_translation);
            put(&mut x, o + 3, &d.color_jitter, s.jitter_color);
            put(&mut x, o + 6, &d.camera_rot_jitter, s.camera_rotation);
            put(&mut x, o + 9, &d.camera_trans_jitter, s.camera_translation);
        }
        for (m, d) in e.degradation.iter().enumerate() {
            let o = self.degradation_offset(m);
            x[o] = (1.0 - d.contrast) / s.contrast;
            x[o + 1] = d.blur_sigma / s.blur;
        }
        Ok(x)
    }

    fn check(&self, len: usize) -> Result<(), PolicyError> {
        if len != self.dim() {
            return Err(PolicyError::DimensionMismatch {
                expected: self.dim(),
                actual: len,
            });
        }
        Ok(())
    }
}

/// Mean and log standard deviation of the action distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

/// One sampled action with its density under the sampling policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub x: Vec<f64>,
    pub log_prob_old: f64,
    pub decoded: EditVector,
}

impl PolicyParams {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self, PolicyError> {
        if mean.len() != log_std.len() {
            return Err(PolicyError::DimensionMismatch {
                expected: mean.len(),
                actual: log_std.len(),
            });
        }
        let mut p = PolicyParams { mean, log_std };
        p.clamp();
        Ok(p)
    }

    /// Identity-edit mean with separate spreads for the edit and the
    /// degradation coordinates.
    pub fn initial(layout: &Layout, edit_std: f64, degradation_std: f64) -> Self {
        let d = layout.dim();
        let log_std = (0..d)
            .map(|i| {
                if layout.is_degradation(i) {
                    degradation_std.ln()
                } else {
                    edit_std.ln()
                }
            })
            .collect();
        let mut p = PolicyParams {
            mean: vec![0.0; d],
            log_std,
        };
        p.clamp();
        p
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn clamp(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(MIN_LOG_STD, MAX_LOG_STD);
        }
    }

    fn std(&self, i: usize, noise_scale: f64) -> f64 {
        noise_scale * self.log_std[i].exp()
    }

    /// `x = mean + noise_scale·exp(log_std)⊙ε`.
    pub fn sample_x<R: Rng + ?Sized>(&self, noise_scale: f64, rng: &mut R) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let eps: f64 = rng.sample(StandardNormal);
                self.mean[i] + self.std(i, noise_scale) * eps
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        layout: &Layout,
        noise_scale: f64,
        rng: &mut R,
    ) -> Result<Candidate, PolicyError> {
        let x = self.sample_x(noise_scale, rng);
        let log_prob_old = self.log_prob(&x, noise_scale)?;
        let decoded = layout.decode(&x)?;
        Ok(Candidate {
            x,
            log_prob_old,
            decoded,
        })
    }

    /// Diagonal-Gaussian log density with std `noise_scale·exp(log_std)`.
    pub fn log_prob(&self, x: &[f64], noise_scale: f64) -> Result<f64, PolicyError> {
        self.check(x.len())?;
        let mut lp = 0.0;
        for (i, xi) in x.iter().enumerate() {
            let s = self.std(i, noise_scale);
            let z = (xi - self.mean[i]) / s;
            lp += -0.5 * z * z - s.ln() - 0.5 * LN_2PI;
        }
        Ok(lp)
    }

    /// Gradients of [`PolicyParams::log_prob`] with respect to mean and log_std.
    pub fn grad_log_prob(&self, x: &[f64], noise_scale: f64) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
        self.check(x.len())?;
        let mut gm = Vec::with_capacity(x.len());
        let mut gs = Vec::with_capacity(x.len());
        for (i, xi) in x.iter().enumerate() {
            let s = self.std(i, noise_scale);
            let diff = xi - self.mean[i];
            gm.push(diff / (s * s));
            gs.push(diff * diff / (s * s) - 1.0);
        }
        Ok((gm, gs))
    }

    /// `KL(self ‖ reference)` between the unscaled distributions.
    pub fn kl_divergence(&self, reference: &PolicyParams) -> Result<f64, PolicyError> {
        self.check(reference.dim())?;
        let mut kl = 0.0;
        for i in 0..self.dim() {
            let (ls, lr) = (self.log_std[i], reference.log_std[i]);
            let var_ratio = (2.0 * (ls - lr)).exp();
            let dm = self.mean[i] - reference.mean[i];
            kl += lr - ls + 0.5 * (var_ratio + dm * dm * (-2.0 * lr).exp()) - 0.5;
        }
        Ok(kl.max(0.0))
    }

    /// Gradients of [`PolicyParams::kl_divergence`] with respect to the
    /// parameters of `self`.
    pub fn grad_kl(&self, reference: &PolicyParams) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
        self.check(reference.dim())?;
        let gm = (0..self.dim())
            .map(|i| (self.mean[i] - reference.mean[i]) * (-2.0 * reference.log_std[i]).exp())
            .collect();
        let gs = (0..self.dim())
            .map(|i| (2.0 * (self.log_std[i] - reference.log_std[i])).exp() - 1.0)
            .collect();
        Ok((gm, gs))
    }

    fn check(&self, len: usize) -> Result<(), PolicyError> {
        if len != self.dim() {
            return Err(PolicyError::DimensionMismatch {
                expected: self.dim(),
                actual: len,
            });
        }
        Ok(())
    }

    /// Text header followed by `mean ‖ log_std` as little-endian f64.
    pub fn write_checkpoint<W: Write>(&self, m_views: usize, mut out: W) -> std::io::Result<()> {
        writeln!(out, "mvgrpo-policy")?;
        writeln!(out, "layout_version {LAYOUT_VERSION}")?;
        writeln!(out, "d {}", self.dim())?;
        writeln!(out, "m_views {m_views}")?;
        writeln!(out, "end_header")?;
        for v in self.mean.iter().chain(&self.log_std) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a checkpoint, returning the parameters and the view count.
    pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<(Self, usize), PolicyError> {
        let bad = |s: &str| PolicyError::Checkpoint(s.to_string());
        let mut line = String::new();
        let mut next = |input: &mut R| -> Result<String, PolicyError> {
            line.clear();
            input.read_line(&mut line).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
            Ok(line.trim_end().to_string())
        };
        if next(&mut input)? != "mvgrpo-policy" {
            return Err(bad("missing magic line"));
        }
        let mut field = |input: &mut R, key: &str| -> Result<usize, PolicyError> {
            let l = next(input)?;
            l.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| PolicyError::Checkpoint(format!("expected `{key} <n>`, got `{l}`")))
        };
        let version = field(&mut input, "layout_version")?;
        if version != LAYOUT_VERSION as usize {
            return Err(PolicyError::Checkpoint(format!("unsupported layout version {version}")));
        }
        let d = field(&mut input, "d")?;
        let m_views = field(&mut input, "m_views")?;
        if d != action_dim(m_views) {
            return Err(bad("d does not match m_views"));
        }
        if next(&mut input)? != "end_header" {
            return Err(bad("missing end_header"));
        }
        let mut buf = vec![0u8; 16 * d];
        input
            .read_exact(&mut buf)
            .map_err(|_| bad("truncated parameter block"))?;
        let mut trailing = [0u8; 1];
        if input.read(&mut trailing).map_err(|e| PolicyError::Checkpoint(e.to_string()))? != 0 {
            return Err(bad("trailing bytes after parameters"));
        }
        let vals: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let (mean, log_std) = vals.split_at(d);
        Ok((PolicyParams::new(mean.to_vec(), log_std.to_vec())?, m_views))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(mean: &[f64], std: &[f64]) -> PolicyParams {
        PolicyParams::new(mean.to_vec(), std.iter().map(|s| s.ln()).collect()).unwrap()
    }

    #[test]
    fn standard_normal_density_at_zero() {
        let p = params(&[0.0], &[1.0]);
        assert!((p.log_prob(&[0.0], 1.0).unwrap() - (-0.918_938_5)).abs() < 1e-7);
    }

    #[test]
    fn mean_gradient_cases() {
        let p = params(&[0.0], &[1.0]);
        assert_eq!(p.grad_log_prob(&[2.0], 1.0).unwrap().0, vec![2.0]);
        let q = params(&[0.3, -1.0], &[0.5, 2.0]);
        assert_eq!(q.grad_log_prob(&q.mean, 0.8).unwrap().0, vec![0.0, 0.0]);
    }

    #[test]
    fn kl_cases() {
        let p = params(&[1.0], &[1.0]);
        let r = params(&[0.0], &[1.0]);
        assert!((p.kl_divergence(&r).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(r.kl_divergence(&r).unwrap(), 0.0);
        assert!(matches!(
            p.kl_divergence(&params(&[0.0, 0.0], &[1.0, 1.0])),
            Err(PolicyError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn log_std_is_clamped() {
        let p = PolicyParams::new(vec![0.0; 2], vec![-10.0, 5.0]).unwrap();
        assert_eq!(p.log_std, vec![MIN_LOG_STD, MAX_LOG_STD]);
    }

    #[test]
    fn sampling_is_deterministic_and_recorded_exactly() {
        let layout = Layout::new(3, 1, DecodeScales::default());
        let p = PolicyParams::initial(&layout, 0.3, 0.1);
        let a = p.sample(&layout, 0.8, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = p.sample(&layout, 0.8, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(p.log_prob(&a.x, 0.8).unwrap(), a.log_prob_old);
        assert_eq!(layout.decode(&a.x).unwrap(), a.decoded);
    }

    #[test]
    fn vanishing_noise_returns_mean() {
        let p = params(&[0.4, -0.2, 1.0], &[1.0, 0.5, 2.0]);
        let x = p.sample_x(1e-12, &mut ChaCha8Rng::seed_from_u64(1));
        for (a, b) in x.iter().zip(&p.mean) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn sample_mean_obeys_clt_bound() {
        let p = params(&[0.5, -1.0, 2.0, 0.0], &[0.3, 1.0, 2.0, 0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let mut sum = [0.0; 4];
        for _ in 0..n {
            for (s, v) in sum.iter_mut().zip(p.sample_x(1.0, &mut rng)) {
                *s += v;
            }
        }
        for i in 0..4 {
            let sigma = p.log_std[i].exp();
            let bound = 4.0 * sigma / (n as f64).sqrt();
            assert!((sum[i] / n as f64 - p.mean[i]).abs() <= bound, "coord {i}");
        }
    }

    #[test]
    fn density_integrates_to_one() {
        // importance-free Monte Carlo: uniform samples over a box holding
        // essentially all of the mass
        let p = params(&[0.3, -0.5], &[0.7, 1.2]);
        let (lo, hi) = ([0.3 - 7.0, -0.5 - 12.0], [0.3 + 7.0, -0.5 + 12.0]);
        let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])];
            acc += p.log_prob(&x, 1.0).unwrap().exp();
        }
        let integral = acc / n as f64 * area;
        assert!((integral - 1.0).abs() < 0.01, "{integral}");
    }

    #[test]
    fn decode_encode_roundtrip() {
        let layout = Layout::new(2, 7, DecodeScales::default());
        let mut e = EditVector::consistent(
            SharedEdit {
                target: 7,
                color_delta: [0.2, -0.1, 0.05],
                translation_delta: [0.0, 0.3, -0.2],
                radius_scale: 1.5,
            },
            2,
        );
        e.per_view[1].translation_jitter = [0.01, 0.02, -0.03];
        e.per_view[0].camera_rot_jitter = [0.0, 0.004, 0.0];
        e.degradation[1] = Degradation {
            contrast: 0.6,
            blur_sigma: 1.25,
        };
        let x = layout.encode(&e).unwrap();
        let back = layout.decode(&x).unwrap();
        assert_eq!(back.shared.target, 7);
        let y = layout.encode(&back).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((back.degradation[1].contrast - 0.6).abs() < 1e-12);
        assert!((back.shared.radius_scale - 1.5).abs() < 1e-12);
        assert_eq!(layout.decode(&vec![0.0; layout.dim()]).unwrap(), EditVector::consistent(SharedEdit::identity(7), 2));
    }

    #[test]
    fn decode_applies_clamps() {
        let layout = Layout::new(1, 1, DecodeScales::default());
        let mut x = vec![0.0; layout.dim()];
        x[6] = 100.0;
        let g = SHARED_DIM + DEVIATION_DIM;
        x[g + 2] = -3.0;
        x[g + 3] = -3.0;
        let e = layout.decode(&x).unwrap();
        assert_eq!(e.shared.radius_scale, MAX_RADIUS_SCALE);
        assert_eq!(e.degradation[0].contrast, 1.0);
        assert_eq!(e.degradation[0].blur_sigma, 0.0);
        // the global pair shifts every view
        x[g] = 3.5;
        x[g + 1] = 4.0;
        let e = layout.decode(&x).unwrap();
        assert!((e.degradation[0].contrast - 0.0).abs() < 1e-12);
        assert!((e.degradation[0].blur_sigma - 2.0).abs() < 1e-12);
        assert!(layout.decode(&x[1..]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_rejects_garbage() {
        let layout = Layout::new(2, 1, DecodeScales::default());
        let mut p = PolicyParams::initial(&layout, 0.3, 0.1);
        p.mean[4] = -0.125;
        let mut buf = Vec::new();
        p.write_checkpoint(2, &mut buf).unwrap();
        let (q, m) = PolicyParams::read_checkpoint(&buf[..]).unwrap();
        assert_eq!((q, m), (p, 2));
        assert!(PolicyParams::read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(PolicyParams::read_checkpoint(&extra[..]).is_err());
        assert!(PolicyParams::read_checkpoint(&b"nonsense\n"[..]).is_err());
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    proptest! {
        #[test]
        fn grad_log_prob_matches_finite_differences(
            mean in prop::collection::vec(-2.0f64..2.0, 3),
            log_std in prop::collection::vec(-1.0f64..1.0, 3),
            x in prop::collection::vec(-3.0f64..3.0, 3),
            noise in 0.3f64..1.5,
        ) {
            let p = PolicyParams::new(mean, log_std).unwrap();
            let (gm, gs) = p.grad_log_prob(&x, noise).unwrap();
            let h = 1e-5;
            for i in 0..3 {
                let mut a = p.clone();
                let mut b = p.clone();
                a.mean[i] += h;
                b.mean[i] -= h;
                let fd = (a.log_prob(&x, noise).unwrap() - b.log_prob(&x, noise).unwrap()) / (2.0 * h);
                prop_assert!(rel_err(gm[i], fd) <= 1e-5 || (gm[i] - fd).abs() < 1e-7);
                let mut a = p.clone();
                let mut b = p.clone();
                a.log_std[i] += h;
                b.log_std[i] -= h;
                let fd = (a.log_prob(&x, noise).unwrap() - b.log_prob(&x, noise).unwrap()) / (2.0 * h);
                prop_assert!(rel_err(gs[i], fd) <= 1e-5 || (gs[i] - fd).abs() < 1e-7);
            }
        }

        #[test]
        fn kl_is_non_negative_and_grows_with_mean_distance(
            mean in prop::collection::vec(-2.0f64..2.0, 4),
            log_std in prop::collection::vec(-1.0f64..1.0, 4),
            ref_log_std in prop::collection::vec(-1.0f64..1.0, 4),
            dir in prop::collection::vec(-1.0f64..1.0, 4),
        ) {
            prop_assume!(dir.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let r = PolicyParams::new(mean.clone(), ref_log_std).unwrap();
            let mut prev = -1.0;
            for step in 0..6 {
                let t = step as f64 * 0.5;
                let m: Vec<f64> = mean.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
                let p = PolicyParams::new(m, log_std.clone()).unwrap();
                let kl = p.kl_divergence(&r).unwrap();
                prop_assert!(kl >= 0.0);
                prop_assert!(kl >= prev);
                prev = kl;
            }
        }

        #[test]
        fn grad_kl_matches_finite_differences(
            mean in prop::collection::vec(-2.0f64..2.0, 3),
            log_std in prop::collection::vec(-1.0f64..1.0, 3),
            rmean in prop::collection::vec(-2.0f64..2.0, 3),
            rlog in prop::collection::vec(-1.0f64..1.0, 3),
        ) {
            let p = PolicyParams::new(mean, log_std).unwrap();
            let r = PolicyParams::new(rmean, rlog).unwrap();
            let (gm, gs) = p.grad_kl(&r).unwrap();
            let h = 1e-5;
            for i in 0..3 {
                let mut a = p.clone();
                let mut b = p.clone();
                a.mean[i] += h;
                b.mean[i] -= h;
                let fd = (a.kl_divergence(&r).unwrap() - b.kl_divergence(&r).unwrap()) / (2.0 * h);
                prop_assert!(rel_err(gm[i], fd) <= 1e-5 || (gm[i] - fd).abs() < 1e-7);
                let mut a = p.clone();
                let mut b = p.clone();
                a.log_std[i] += h;
                b.log_std[i] -= h;
                let fd = (a.kl_divergence(&r).unwrap() - b.kl_divergence(&r).unwrap()) / (2.0 * h);
                prop_assert!(rel_err(gs[i], fd) <= 1e-5 || (gs[i] - fd).abs() < 1e-7);
            }
        }
    }
}
