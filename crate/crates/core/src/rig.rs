use nalgebra::Vector3;

use crate::error::SceneError;
use crate::geometry::{look_at, relative_transform, Intrinsics, Pose, RelativePose};

/// Ordered cameras with their ground-truth adjacent relative poses.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    poses: Vec<Pose>,
    intrinsics: Intrinsics,
    gt_relative: Vec<RelativePose>,
}

impl CameraRig {
    pub fn from_poses(poses: Vec<Pose>, intrinsics: Intrinsics) -> Result<Self, SceneError> {
        if poses.len() < 2 {
            return Err(SceneError::BadConfig(format!(
                "a rig needs at least 2 views, got {}",
                poses.len()
            )));
        }
        intrinsics.validate()?;
        let gt_relative = poses
            .windows(2)
            .map(|w| relative_transform(&w[0], &w[1]))
            .collect();
        Ok(CameraRig {
            poses,
            intrinsics,
            gt_relative,
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn pose(&self, m: usize) -> &Pose {
        &self.poses[m]
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn gt_relative(&self) -> &[RelativePose] {
        &self.gt_relative
    }
}

/// Cameras evenly spaced on a horizontal arc of `arc_degrees` centered on
/// `+z` around `target`, all looking at `target` with `+y` up.
pub fn build_rig(
    m_views: usize,
    radius: f64,
    arc_degrees: f64,
    target: Vector3<f64>,
    k: Intrinsics,
) -> Result<CameraRig, SceneError> {
    if m_views < 2 {
        return Err(SceneError::BadConfig(format!(
            "m_views must be at least 2, got {m_views}"
        )));
    }
    if !(radius > 0.0) || !arc_degrees.is_finite() {
        return Err(SceneError::BadConfig(format!(
            "rig radius must be positive and arc finite (radius {radius}, arc {arc_degrees})"
        )));
    }
    let arc = arc_degrees.to_radians();
    let poses = (0..m_views)
        .map(|m| {
            let theta = -0.5 * arc + arc * m as f64 / (m_views - 1) as f64;
            let eye = target + Vector3::new(theta.sin(), 0.0, theta.cos()) * radius;
            look_at(&eye, &target, &Vector3::y())
        })
        .collect();
    CameraRig::from_poses(poses, k)
}
