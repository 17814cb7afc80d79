//! Group-relative policy optimization of the editor against the verifiers.

use std::fmt;
use std::str::FromStr;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edit::{make_anchor, render_candidate, EditVector, SharedEdit};
use crate::error::TrainError;
use crate::policy::{Candidate, DecodeScales, Layout, PolicyParams};
use crate::rig::CameraRig;
use crate::scene::{RenderOutput, Scene};
use crate::verifiers::{
    anchor_reward, estimate_relative_poses, geometric_rewards, perceptual_distance, ph_loss,
    photoconsistency_confidence, pose_reward, sfm_reward, warp_reward, ConfidenceParams, Diagnostics,
    FeatureParams, PoseEstimate, RewardBreakdown, RewardRecord, Weights,
};

/// Which reward the policy is trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierMode {
    Full,
    NoGeo,
    NoPose,
    NoAnchor,
    SfmOnly,
    WarpOnly,
}

impl VerifierMode {
    pub const ALL: [VerifierMode; 6] = [
        VerifierMode::Full,
        VerifierMode::NoGeo,
        VerifierMode::NoPose,
        VerifierMode::NoAnchor,
        VerifierMode::SfmOnly,
        VerifierMode::WarpOnly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VerifierMode::Full => "full",
            VerifierMode::NoGeo => "no_geo",
            VerifierMode::NoPose => "no_pose",
            VerifierMode::NoAnchor => "no_anchor",
            VerifierMode::SfmOnly => "sfm_only",
            VerifierMode::WarpOnly => "warp_only",
        }
    }

    /// Weights of the terms this mode uses, renormalized to sum to 1.
    /// `None` for the single-verifier baselines.
    pub fn weights(&self, w: &Weights) -> Option<Weights> {
        let mut w = *w;
        match self {
            VerifierMode::Full => {}
            VerifierMode::NoGeo => {
                w.w_d = 0.0;
                w.w_p = 0.0;
            }
            VerifierMode::NoPose => w.w_t = 0.0,
            VerifierMode::NoAnchor => w.w_a = 0.0,
            VerifierMode::SfmOnly | VerifierMode::WarpOnly => return None,
        }
        let total = w.w_d + w.w_p + w.w_t + w.w_a;
        Some(if total > 0.0 { w.scaled(1.0 / total) } else { w })
    }

    /// Whether view `a` is replaced by its anchor before verification.
    pub fn substitutes_anchor(&self) -> bool {
        matches!(self, VerifierMode::Full | VerifierMode::NoGeo | VerifierMode::NoPose)
    }
}

impl fmt::Display for VerifierMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VerifierMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VerifierMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown verifier mode `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub group_size: usize,
    pub noise_scale: f64,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub std_floor: f64,
    pub weights: Weights,
    pub verifier_mode: VerifierMode,
    pub seed: u64,
    /// Initial policy std of the shared and per-view coordinates.
    pub edit_std: f64,
    /// Initial policy std of the degradation coordinates.
    pub degradation_std: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            group_size: 16,
            noise_scale: 0.8,
            clip_epsilon: 0.2,
            kl_beta: 0.01,
            learning_rate: 0.05,
            iterations: 300,
            std_floor: 1e-8,
            weights: Weights::default(),
            verifier_mode: VerifierMode::Full,
            seed: 0,
            edit_std: 0.3,
            degradation_std: 0.1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |s: String| Err(TrainError::BadConfig(s));
        if self.group_size < 2 {
            return bad(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad(format!("clip_epsilon must lie in (0, 1), got {}", self.clip_epsilon));
        }
        for (name, v) in [
            ("noise_scale", self.noise_scale),
            ("learning_rate", self.learning_rate),
            ("std_floor", self.std_floor),
            ("edit_std", self.edit_std),
            ("degradation_std", self.degradation_std),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return bad(format!("kl_beta must be non-negative, got {}", self.kl_beta));
        }
        if !self.weights.is_valid() {
            return bad("weights must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Verifier tunables shared by every mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifierSettings {
    pub confidence: ConfidenceParams,
    pub features: FeatureParams,
    /// Sharpness λ of the anchor reward.
    pub anchor_lambda: f64,
}

impl Default for VerifierSettings {
    fn default() -> Self {
        VerifierSettings {
            confidence: ConfidenceParams::default(),
            features: FeatureParams::default(),
            anchor_lambda: 5.0,
        }
    }
}

/// Everything a rollout needs besides the policy: the scene, the rig, the
/// reference edit and its pre-rendered per-view anchors.
#[derive(Debug, Clone)]
pub struct Environment {
    pub scene: Scene,
    pub rig: CameraRig,
    pub shared_star: SharedEdit,
    pub anchors: Vec<RenderOutput>,
    pub layout: Layout,
    pub verifiers: VerifierSettings,
}

impl Environment {
    pub fn new(
        scene: Scene,
        rig: CameraRig,
        shared_star: SharedEdit,
        scales: DecodeScales,
        verifiers: VerifierSettings,
    ) -> Result<Self, TrainError> {
        let anchors = (0..rig.len())
            .map(|a| make_anchor(&scene, &rig, a, &shared_star))
            .collect::<Result<Vec<_>, _>>()?;
        let layout = Layout::new(rig.len(), shared_star.target, scales);
        Ok(Environment {
            scene,
            rig,
            shared_star,
            anchors,
            layout,
            verifiers,
        })
    }

    pub fn render(&self, edit: &EditVector) -> Result<Vec<RenderOutput>, TrainError> {
        Ok(render_candidate(&self.scene, &self.rig, edit)?)
    }

    /// Reward of rendered views under `mode` with anchor index `a`. Terms the
    /// mode does not evaluate are reported as NaN; for the single-verifier
    /// baselines the composite is that verifier's reward.
    pub fn score(
        &self,
        views: &[RenderOutput],
        a: usize,
        mode: VerifierMode,
        weights: &Weights,
    ) -> Result<RewardBreakdown, TrainError> {
        let v = &self.verifiers;
        match mode {
            VerifierMode::SfmOnly => {
                let r = sfm_reward(views, self.rig.intrinsics(), &v.features)?;
                return Ok(single(r));
            }
            VerifierMode::WarpOnly => return Ok(single(warp_reward(views, &self.rig)?)),
            _ => {}
        }
        let w = mode.weights(weights).expect("composite mode");
        let substituted;
        let set = if mode.substitutes_anchor() {
            let mut s = views.to_vec();
            s[a] = self.anchors[a].clone();
            substituted = s;
            &substituted[..]
        } else {
            views
        };
        let (mut r_d, mut r_p, mut r_t, mut r_a) = (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
        if w.w_d > 0.0 || w.w_p > 0.0 {
            let (cd, cp) = photoconsistency_confidence(set, &self.rig, &v.confidence)?;
            let g = geometric_rewards(&cd, &cp);
            r_d = g.r_d;
            r_p = g.r_p;
        }
        if w.w_t > 0.0 {
            let est = estimate_relative_poses(set, &self.rig, &v.features)?;
            r_t = pose_reward(&est, self.rig.gt_relative())?;
        }
        if w.w_a > 0.0 {
            r_a = anchor_reward(&views[a].image, &self.anchors[a].image, v.anchor_lambda)?;
        }
        let term = |r: f64, wt: f64| if wt > 0.0 { wt * r } else { 0.0 };
        let composite = term(r_d, w.w_d) + term(r_p, w.w_p) + term(r_t, w.w_t) + term(r_a, w.w_a);
        Ok(RewardBreakdown {
            r_d,
            r_p,
            r_t,
            r_a,
            composite,
        })
    }

    /// Mean perceptual distance between each view and its anchor.
    pub fn anchor_distance(&self, views: &[RenderOutput]) -> Result<f64, TrainError> {
        let mut total = 0.0;
        for (v, a) in views.iter().zip(&self.anchors) {
            total += perceptual_distance(&v.image, &a.image)?;
        }
        Ok(total / views.len() as f64)
    }

    /// Full set of evaluation metrics for one edit, independent of the
    /// training mode. The reward terms use the middle view as anchor.
    pub fn evaluate(&self, edit: &EditVector, weights: &Weights) -> Result<EvalMetrics, TrainError> {
        let views = self.render(edit)?;
        let a = self.rig.len() / 2;
        let reward = self.score(&views, a, VerifierMode::Full, weights)?;
        let est = estimate_relative_poses(&views, &self.rig, &self.verifiers.features)?;
        let rot: f64 = est
            .iter()
            .zip(self.rig.gt_relative())
            .map(|(e, gt)| match e {
                PoseEstimate::Estimated(r) => r.rotation.angle_to(&gt.rotation).to_degrees(),
                PoseEstimate::InsufficientMatches { .. } => 180.0,
            })
            .sum::<f64>()
            / est.len() as f64;
        let diag = Diagnostics::of_images(views.iter().map(|v| &v.image));
        Ok(EvalMetrics {
            reward,
            ph_loss: ph_loss(&views, self.rig.poses(), self.rig.intrinsics())?,
            anchor_distance: self.anchor_distance(&views)?,
            rotation_error_deg: rot,
            max_jitter: edit.per_view.iter().map(|d| d.max_abs()).fold(0.0, f64::max),
            texture_energy: diag.texture_energy,
            high_frequency_energy: diag.high_frequency_energy,
        })
    }
}

fn single(r: f64) -> RewardBreakdown {
    RewardBreakdown {
        r_d: f64::NAN,
        r_p: f64::NAN,
        r_t: f64::NAN,
        r_a: f64::NAN,
        composite: r,
    }
}

/// Mode-independent measurements of one edit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub reward: RewardBreakdown,
    pub ph_loss: f64,
    pub anchor_distance: f64,
    /// Mean geodesic error of the estimated adjacent rotations; pairs
    /// without an estimate count as 180°.
    pub rotation_error_deg: f64,
    pub max_jitter: f64,
    pub texture_energy: f64,
    pub high_frequency_energy: f64,
}

/// `A_i = (R_i − mean) / std` with the population std; all zeros when the
/// std does not exceed `eps`.
pub fn compute_advantages(rewards: &[f64], eps: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    if rewards.is_empty() {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(std > eps) {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// Value and gradient of an objective with respect to mean and log_std.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub grad_mean: Vec<f64>,
    pub grad_log_std: Vec<f64>,
}

/// `J_clip = (1/G) Σ min(ρ_i A_i, clip(ρ_i, 1−ε, 1+ε) A_i)` with
/// `ρ_i = exp(log π(x_i) − log π_old(x_i))`. Gradient flows only through
/// terms where the unclipped product is the minimum.
pub fn clipped_objective(
    policy: &PolicyParams,
    candidates: &[Candidate],
    advantages: &[f64],
    clip_epsilon: f64,
    noise_scale: f64,
) -> Result<ObjectiveValue, TrainError> {
    if candidates.len() != advantages.len() {
        return Err(TrainError::LengthMismatch(candidates.len(), advantages.len()));
    }
    let d = policy.dim();
    let g = candidates.len().max(1) as f64;
    let mut value = 0.0;
    let mut gm = vec![0.0; d];
    let mut gs = vec![0.0; d];
    for (c, &adv) in candidates.iter().zip(advantages) {
        let ratio = (policy.log_prob(&c.x, noise_scale)? - c.log_prob_old).exp();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon) * adv;
        if unclipped <= clipped {
            value += unclipped;
            if adv != 0.0 {
                let (dm, ds) = policy.grad_log_prob(&c.x, noise_scale)?;
                for i in 0..d {
                    gm[i] += unclipped * dm[i];
                    gs[i] += unclipped * ds[i];
                }
            }
        } else {
            value += clipped;
        }
    }
    Ok(ObjectiveValue {
        value: value / g,
        grad_mean: gm.into_iter().map(|v| v / g).collect(),
        grad_log_std: gs.into_iter().map(|v| v / g).collect(),
    })
}

/// `J = J_clip − β·KL(policy ‖ reference)`.
pub fn objective(
    policy: &PolicyParams,
    reference: &PolicyParams,
    candidates: &[Candidate],
    advantages: &[f64],
    cfg: &TrainerConfig,
) -> Result<ObjectiveValue, TrainError> {
    let mut j = clipped_objective(policy, candidates, advantages, cfg.clip_epsilon, cfg.noise_scale)?;
    if cfg.kl_beta > 0.0 {
        let kl = policy.kl_divergence(reference)?;
        let (km, ks) = policy.grad_kl(reference)?;
        j.value -= cfg.kl_beta * kl;
        for i in 0..policy.dim() {
            j.grad_mean[i] -= cfg.kl_beta * km[i];
            j.grad_log_std[i] -= cfg.kl_beta * ks[i];
        }
    }
    Ok(j)
}

/// Deterministic 64-bit seed for one `(seed, iteration, member)` stream.
pub fn stream_seed(seed: u64, iteration: u64, member: u64) -> u64 {
    let mut z = seed;
    for v in [iteration, member] {
        z = splitmix(z ^ splitmix(v.wrapping_add(0xA076_1D64_78BD_642F)));
    }
    z
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream index reserved for the anchor draw (members use 0..G).
const ANCHOR_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupRollout {
    pub anchor_index: usize,
    pub candidates: Vec<Candidate>,
    pub rewards: Vec<RewardBreakdown>,
    pub diagnostics: Vec<Diagnostics>,
    pub advantages: Vec<f64>,
}

/// Samples `G` candidates from per-member streams and scores them against
/// one shared anchor index.
pub fn rollout_group(
    policy: &PolicyParams,
    env: &Environment,
    cfg: &TrainerConfig,
    iteration: usize,
) -> Result<GroupRollout, TrainError> {
    let it = iteration as u64;
    let anchor_index = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, it, ANCHOR_STREAM))
        .random_range(0..env.rig.len());
    let candidates = (0..cfg.group_size)
        .map(|g| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, it, g as u64));
            policy.sample(&env.layout, cfg.noise_scale, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    score_group(env, cfg, anchor_index, candidates)
}

/// Scores fixed candidates (in parallel, collected in member order) and
/// computes their advantages.
pub fn score_group(
    env: &Environment,
    cfg: &TrainerConfig,
    anchor_index: usize,
    candidates: Vec<Candidate>,
) -> Result<GroupRollout, TrainError> {
    let scored = candidates
        .par_iter()
        .map(|c| {
            let views = env.render(&c.decoded)?;
            let r = env.score(&views, anchor_index, cfg.verifier_mode, &cfg.weights)?;
            Ok((r, Diagnostics::of_images(views.iter().map(|v| &v.image))))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let (rewards, diagnostics): (Vec<_>, Vec<_>) = scored.into_iter().unzip();
    let composites: Vec<f64> = rewards.iter().map(|r: &RewardBreakdown| r.composite).collect();
    let advantages = compute_advantages(&composites, cfg.std_floor);
    Ok(GroupRollout {
        anchor_index,
        candidates,
        rewards,
        diagnostics,
        advantages,
    })
}

/// One line of the per-iteration training log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub anchor_index: usize,
    pub mean_reward: f64,
    pub max_reward: f64,
    pub kl: f64,
    pub objective: f64,
    pub advantage_mean: f64,
    pub advantage_std: f64,
    /// Mean-action candidate, scored with all four terms.
    pub greedy: RewardBreakdown,
    pub greedy_texture_energy: f64,
    pub greedy_high_frequency_energy: f64,
    pub mean_std: f64,
}

pub const ITERATION_HEADER: &str = "iteration,anchor_index,mean_reward,max_reward,kl,objective,advantage_mean,advantage_std,greedy_r_d,greedy_r_p,greedy_r_t,greedy_r_a,greedy_composite,greedy_texture_energy,greedy_high_frequency_energy,mean_std";

impl fmt::Display for IterationLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = &self.greedy;
        write!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.anchor_index,
            self.mean_reward,
            self.max_reward,
            self.kl,
            self.objective,
            self.advantage_mean,
            self.advantage_std,
            g.r_d,
            g.r_p,
            g.r_t,
            g.r_a,
            g.composite,
            self.greedy_texture_energy,
            self.greedy_high_frequency_energy,
            self.mean_std
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub initial: PolicyParams,
    pub policy: PolicyParams,
    pub logs: Vec<IterationLog>,
    pub records: Vec<RewardRecord>,
}

/// The mean action decoded into an edit.
pub fn greedy_edit(policy: &PolicyParams, layout: &Layout) -> Result<EditVector, TrainError> {
    Ok(layout.decode(&policy.mean)?)
}

/// Applies one gradient-ascent step in place.
pub fn apply_step(policy: &mut PolicyParams, grad: &ObjectiveValue, lr: f64, iteration: usize) -> Result<(), TrainError> {
    for (i, g) in grad.grad_mean.iter().chain(&grad.grad_log_std).enumerate() {
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient { iteration, index: i });
        }
    }
    for (m, g) in policy.mean.iter_mut().zip(&grad.grad_mean) {
        *m += lr * g;
    }
    for (s, g) in policy.log_std.iter_mut().zip(&grad.grad_log_std) {
        *s += lr * g;
    }
    policy.clamp();
    Ok(())
}

/// Runs `cfg.iterations` rollout/update rounds from the identity policy.
/// `on_iteration` sees every log line as it is produced.
pub fn train(
    env: &Environment,
    cfg: &TrainerConfig,
    run_id: &str,
    mut on_iteration: impl FnMut(&IterationLog),
) -> Result<TrainingRun, TrainError> {
    cfg.validate()?;
    let reference = PolicyParams::initial(&env.layout, cfg.edit_std, cfg.degradation_std);
    let mut policy = reference.clone();
    let mut logs = Vec::with_capacity(cfg.iterations);
    let mut records = Vec::with_capacity(cfg.iterations * cfg.group_size);
    for it in 0..cfg.iterations {
        let group = rollout_group(&policy, env, cfg, it)?;
        let j = objective(&policy, &reference, &group.candidates, &group.advantages, cfg)?;
        let composites: Vec<f64> = group.rewards.iter().map(|r| r.composite).collect();
        let n = composites.len() as f64;
        let adv_mean = group.advantages.iter().sum::<f64>() / n;
        let adv_std = (group.advantages.iter().map(|a| (a - adv_mean).powi(2)).sum::<f64>() / n).sqrt();
        debug_assert!(adv_mean.abs() < 1e-9);
        debug_assert!(adv_std == 0.0 || (adv_std - 1.0).abs() < 1e-9);
        for (g, (r, d)) in group.rewards.iter().zip(&group.diagnostics).enumerate() {
            records.push(RewardRecord {
                run_id: run_id.to_string(),
                iteration: it,
                member: g,
                reward: *r,
                diagnostics: *d,
            });
        }
        let greedy_views = env.render(&greedy_edit(&policy, &env.layout)?)?;
        let greedy = env.score(&greedy_views, env.rig.len() / 2, VerifierMode::Full, &cfg.weights)?;
        let gd = Diagnostics::of_images(greedy_views.iter().map(|v| &v.image));
        let log = IterationLog {
            iteration: it,
            anchor_index: group.anchor_index,
            mean_reward: composites.iter().sum::<f64>() / n,
            max_reward: composites.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            kl: policy.kl_divergence(&reference)?,
            objective: j.value,
            advantage_mean: adv_mean,
            advantage_std: adv_std,
            greedy,
            greedy_texture_energy: gd.texture_energy,
            greedy_high_frequency_energy: gd.high_frequency_energy,
            mean_std: policy.log_std.iter().map(|s| s.exp()).sum::<f64>() / policy.dim() as f64,
        };
        on_iteration(&log);
        logs.push(log);
        apply_step(&mut policy, &j, cfg.learning_rate, it)?;
    }
    Ok(TrainingRun {
        initial: reference,
        policy,
        logs,
        records,
    })
}
