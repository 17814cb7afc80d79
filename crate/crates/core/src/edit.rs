//! The editor's action space and how an action turns into rendered views.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::SceneError;
use crate::geometry::{compose, Pose, Rotation};
use crate::image::Image;
use crate::rig::CameraRig;
use crate::scene::{render_view, RenderOutput, Scene, Shape};

pub const MIN_RADIUS_SCALE: f64 = 0.25;
pub const MAX_RADIUS_SCALE: f64 = 4.0;

/// Edit applied identically in every view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharedEdit {
    pub target: u32,
    #[serde(default)]
    pub color_delta: [f64; 3],
    #[serde(default)]
    pub translation_delta: [f64; 3],
    #[serde(default = "one")]
    pub radius_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl SharedEdit {
    pub fn identity(target: u32) -> Self {
        SharedEdit {
            target,
            color_delta: [0.0; 3],
            translation_delta: [0.0; 3],
            radius_scale: 1.0,
        }
    }
}

/// View-specific deviations that break multi-view consistency.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PerViewDeviation {
    pub translation_jitter: [f64; 3],
    pub color_jitter: [f64; 3],
    /// Axis-angle, radians, in the camera frame.
    pub camera_rot_jitter: [f64; 3],
    pub camera_trans_jitter: [f64; 3],
}

impl PerViewDeviation {
    /// Largest absolute component across all four jitters.
    pub fn max_abs(&self) -> f64 {
        self.translation_jitter
            .iter()
            .chain(&self.color_jitter)
            .chain(&self.camera_rot_jitter)
            .chain(&self.camera_trans_jitter)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn camera_perturbation(&self) -> Pose {
        Pose::new(
            Rotation::from_scaled_axis(&Vector3::from(self.camera_rot_jitter)),
            Vector3::from(self.camera_trans_jitter),
        )
    }
}

/// Image-space degradation applied after rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Degradation {
    pub contrast: f64,
    pub blur_sigma: f64,
}

impl Default for Degradation {
    fn default() -> Self {
        Degradation {
            contrast: 1.0,
            blur_sigma: 0.0,
        }
    }
}

impl Degradation {
    pub fn apply(&self, img: &Image) -> Image {
        img.with_contrast(self.contrast).gaussian_blur(self.blur_sigma)
    }
}

/// One complete editor action over `M` views.
#[derive(Debug, Clone, PartialEq)]
pub struct EditVector {
    pub shared: SharedEdit,
    pub per_view: Vec<PerViewDeviation>,
    pub degradation: Vec<Degradation>,
}

impl EditVector {
    /// Consistent action: `shared` in every view, no jitter, no degradation.
    pub fn consistent(shared: SharedEdit, m_views: usize) -> Self {
        EditVector {
            shared,
            per_view: vec![PerViewDeviation::default(); m_views],
            degradation: vec![Degradation::default(); m_views],
        }
    }

    pub fn views(&self) -> usize {
        self.per_view.len()
    }

    /// Shared edit combined with the world-space jitter of view `m`.
    pub fn view_edit(&self, m: usize) -> SharedEdit {
        let d = &self.per_view[m];
        let mut e = self.shared;
        for i in 0..3 {
            e.color_delta[i] += d.color_jitter[i];
            e.translation_delta[i] += d.translation_jitter[i];
        }
        e
    }
}

/// Returns a new scene with the target primitive recolored, moved and scaled.
pub fn apply_edit(scene: &Scene, shared: &SharedEdit) -> Result<Scene, SceneError> {
    let mut out = scene.clone();
    let prim = out
        .primitive_mut(shared.target)
        .ok_or(SceneError::UnknownPrimitive(shared.target))?;
    for i in 0..3 {
        prim.albedo[i] = (prim.albedo[i] + shared.color_delta[i]).clamp(0.0, 1.0);
    }
    let scale = shared.radius_scale.clamp(MIN_RADIUS_SCALE, MAX_RADIUS_SCALE);
    match &mut prim.shape {
        Shape::Sphere { center, radius } => {
            for i in 0..3 {
                center[i] += shared.translation_delta[i];
            }
            *radius *= scale;
        }
        Shape::TexturedQuad {
            center,
            half_u,
            half_v,
            ..
        } => {
            for i in 0..3 {
                center[i] += shared.translation_delta[i];
            }
            *half_u *= scale;
            *half_v *= scale;
        }
    }
    Ok(out)
}

/// Renders all `M` views of one candidate edit.
pub fn render_candidate(
    scene: &Scene,
    rig: &CameraRig,
    edit: &EditVector,
) -> Result<Vec<RenderOutput>, SceneError> {
    if edit.views() != rig.len() || edit.degradation.len() != rig.len() {
        return Err(SceneError::BadConfig(format!(
            "edit has {} views, rig has {}",
            edit.views(),
            rig.len()
        )));
    }
    (0..rig.len())
        .map(|m| {
            let edited = apply_edit(scene, &edit.view_edit(m))?;
            let pose = compose(&edit.per_view[m].camera_perturbation(), rig.pose(m));
            let mut out = render_view(&edited, &pose, rig.intrinsics());
            out.image = edit.degradation[m].apply(&out.image);
            Ok(out)
        })
        .collect()
}

/// Clean render of view `a` under `shared`: the single-view reference edit.
pub fn make_anchor(
    scene: &Scene,
    rig: &CameraRig,
    a: usize,
    shared: &SharedEdit,
) -> Result<RenderOutput, SceneError> {
    if a >= rig.len() {
        return Err(SceneError::IndexOutOfRange {
            index: a,
            len: rig.len(),
        });
    }
    let edited = apply_edit(scene, shared)?;
    Ok(render_view(&edited, rig.pose(a), rig.intrinsics()))
}
