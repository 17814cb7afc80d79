//! Rigid-body and pinhole-camera mathematics.
//!
//! Conventions: right-handed camera frame with `+z` forward, `+x` right and
//! `+y` down. Pixel origin is the top-left corner and pixel centers sit at
//! integer coordinates. A [`Pose`] maps world coordinates into the camera
//! frame (`p_cam = R p_world + t`).

use nalgebra::{Matrix3, Rotation3, Unit, Vector2, Vector3};

use crate::error::GeometryError;

/// Depth below which a point is treated as lying on the camera plane.
pub const MIN_DEPTH: f64 = 1e-9;

/// Norm below which a relative translation has no defined direction.
pub const DEGENERATE_TRANSLATION: f64 = 1e-9;

/// An element of SO(3) stored as a 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix that is already orthonormal with unit determinant.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Projects an arbitrary matrix onto the nearest rotation (polar
    /// decomposition via SVD).
    pub fn nearest(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Rotation(u * d * v_t)
    }

    /// Rotation by `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        if axis.norm() == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle);
        Rotation(*r.matrix())
    }

    /// Exponential map of an axis-angle vector (direction = axis, norm = angle).
    pub fn from_scaled_axis(v: &Vector3<f64>) -> Self {
        Rotation(*Rotation3::from_scaled_axis(*v).matrix())
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Geodesic angle between two rotations, in radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        let rel = self.0.transpose() * other.0;
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Squared Frobenius distance `‖R₁ − R₂‖_F²`.
    pub fn frobenius_sq(&self, other: &Rotation) -> f64 {
        (self.0 - other.0).norm_squared()
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.0.transpose() * self.0 - Matrix3::identity()).amax();
        e.max((self.0.determinant() - 1.0).abs())
    }

    pub fn renormalized(&self) -> Self {
        Self::nearest(&self.0)
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

/// World-to-camera rigid transform `[R | t]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Pose::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose::new(Rotation::identity(), t)
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.matrix().transpose() * self.translation)
    }

    /// Residual of `self ∘ other` against another pose: max abs entry difference.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        let r = (self.rotation.matrix() - other.rotation.matrix()).amax();
        r.max((self.translation - other.translation).amax())
    }
}

/// `a ∘ b`: applies `b` first, then `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose::new(
        a.rotation.compose(&b.rotation),
        a.rotation.apply(&b.translation) + a.translation,
    )
}

pub fn invert(p: &Pose) -> Pose {
    let rt = p.rotation.transpose();
    Pose::new(rt, -rt.apply(&p.translation))
}

/// Rigid transform between consecutive camera frames together with its
/// unit-normalized translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    /// `translation / ‖translation‖`, or zero when the translation is degenerate.
    pub unit_translation: Vector3<f64>,
}

impl RelativePose {
    pub fn from_pose(p: &Pose) -> Self {
        let n = p.translation.norm();
        let unit_translation = if n < DEGENERATE_TRANSLATION {
            Vector3::zeros()
        } else {
            p.translation / n
        };
        RelativePose {
            rotation: p.rotation,
            translation: p.translation,
            unit_translation,
        }
    }

    pub fn identity() -> Self {
        Self::from_pose(&Pose::identity())
    }

    pub fn as_pose(&self) -> Pose {
        Pose::new(self.rotation, self.translation)
    }
}

/// `T_next · T_m⁻¹`, the transform from camera `m` coordinates to camera `m+1`.
pub fn relative_transform(t_m: &Pose, t_next: &Pose) -> RelativePose {
    RelativePose::from_pose(&compose(t_next, &invert(t_m)))
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square image with the principal point at the image center.
    pub fn centered(focal: f64, size: usize) -> Self {
        let c = (size as f64 - 1.0) * 0.5;
        Intrinsics {
            fx: focal,
            fy: focal,
            cx: c,
            cy: c,
            width: size,
            height: size,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics)
        }
    }

    /// Whether a continuous pixel coordinate lies inside the image rectangle
    /// spanned by the pixel centers.
    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0
            && px.y >= 0.0
            && px.x <= (self.width - 1) as f64
            && px.y <= (self.height - 1) as f64
    }

    /// Camera-frame ray direction (z = 1) through a pixel.
    pub fn ray(&self, px: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0)
    }
}

pub fn project(
    point: &Vector3<f64>,
    k: &Intrinsics,
) -> Result<(Vector2<f64>, f64), GeometryError> {
    let z = point.z;
    if z <= MIN_DEPTH {
        return Err(GeometryError::NonPositiveDepth(z));
    }
    let px = Vector2::new(k.fx * point.x / z + k.cx, k.fy * point.y / z + k.cy);
    Ok((px, z))
}

pub fn unproject(
    pixel: &Vector2<f64>,
    depth: f64,
    k: &Intrinsics,
) -> Result<Vector3<f64>, GeometryError> {
    if depth <= MIN_DEPTH {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    Ok(k.ray(pixel) * depth)
}

/// Result of moving a pixel from one camera into another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Warp {
    pub pixel: Vector2<f64>,
    pub depth: f64,
    /// The target pixel lies outside the image rectangle.
    pub out_of_frame: bool,
}

/// Unprojects `pixel` at `depth_src` in the source camera, moves it through
/// `pose_tgt ∘ pose_src⁻¹` and projects it into the target camera.
pub fn warp_pixel(
    pixel: &Vector2<f64>,
    depth_src: f64,
    pose_src: &Pose,
    pose_tgt: &Pose,
    k: &Intrinsics,
) -> Result<Warp, GeometryError> {
    let rel = compose(pose_tgt, &invert(pose_src));
    warp_with_relative(pixel, depth_src, &rel, k)
}

/// [`warp_pixel`] with the source-to-target transform precomputed.
pub fn warp_with_relative(
    pixel: &Vector2<f64>,
    depth_src: f64,
    src_to_tgt: &Pose,
    k: &Intrinsics,
) -> Result<Warp, GeometryError> {
    let p_src = unproject(pixel, depth_src, k)?;
    let p_tgt = src_to_tgt.apply(&p_src);
    if p_tgt.z <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera(p_tgt.z));
    }
    let (px, depth) = project(&p_tgt, k)?;
    Ok(Warp {
        pixel: px,
        depth,
        out_of_frame: !k.contains(&px),
    })
}

/// World-to-camera pose of a camera at `eye` looking at `target` with the
/// given world up direction.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Pose {
    let z = (target - eye).normalize();
    let down = -up;
    let mut x = down.cross(&z);
    if x.norm() < 1e-12 {
        // forward parallel to up: pick any perpendicular axis
        x = z.cross(&Vector3::x());
        if x.norm() < 1e-12 {
            x = z.cross(&Vector3::z());
        }
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let rotation = Rotation::from_matrix_unchecked(r);
    Pose::new(rotation, -rotation.apply(eye))
}
