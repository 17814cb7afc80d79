use crate::error::VerifierError;
use crate::geometry::RelativePose;

use super::PoseEstimate;

/// Cost of a pair without an estimate: the largest possible rotation term
/// (`4(1 − cos π) = 8`) plus the largest unit-translation term (`‖2u‖² = 4`).
pub const DEGENERATE_PAIR_PENALTY: f64 = 12.0;

/// Per-pair cost `‖R − R*‖_F² + ‖t̃ − t̃*‖²`.
pub fn pair_cost(est: &PoseEstimate, gt: &RelativePose) -> f64 {
    match est {
        PoseEstimate::Estimated(e) => {
            e.rotation.frobenius_sq(&gt.rotation)
                + (e.unit_translation - gt.unit_translation).norm_squared()
        }
        PoseEstimate::InsufficientMatches { .. } => DEGENERATE_PAIR_PENALTY,
    }
}

/// `exp(−mean_m cost_m)` over the `M − 1` adjacent pairs.
pub fn pose_reward(est: &[PoseEstimate], gt: &[RelativePose]) -> Result<f64, VerifierError> {
    if est.len() != gt.len() {
        return Err(VerifierError::LengthMismatch(est.len(), gt.len()));
    }
    if est.is_empty() {
        return Ok(1.0);
    }
    let total: f64 = est.iter().zip(gt).map(|(e, g)| pair_cost(e, g)).sum();
    Ok((-total / est.len() as f64).exp())
}
