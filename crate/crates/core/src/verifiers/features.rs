//! Sparse corner matching between adjacent views and rigid alignment of the
//! matched 3D points. Backs both the relative-pose estimate and the
//! structure-from-motion style baseline reward.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::VerifierError;
use crate::geometry::{unproject, Intrinsics, Pose, RelativePose, Rotation};
use crate::image::{gaussian_kernel, Image};
use crate::rig::CameraRig;
use crate::scene::RenderOutput;

use super::confidence::sample_view;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureParams {
    pub top_k: usize,
    pub nms_radius: usize,
    /// Side of the square NCC patch (odd).
    pub patch: usize,
    pub ncc_min: f64,
    pub harris_k: f64,
    /// Absolute Harris response floor on `[0, 1]` luminance.
    pub harris_threshold: f64,
    pub min_matches: usize,
    /// Outlier cut in standard deviations above the mean residual.
    pub outlier_sigma: f64,
    /// Absolute and relative slack of the pairwise-distance check that
    /// screens matches before the pose fit.
    pub rigidity_tol: f64,
    pub rigidity_rel: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            top_k: 64,
            nms_radius: 3,
            patch: 7,
            ncc_min: 0.8,
            harris_k: 0.04,
            harris_threshold: 2e-7,
            min_matches: 6,
            outlier_sigma: 2.0,
            rigidity_tol: 0.05,
            rigidity_rel: 0.03,
        }
    }
}

/// Relative pose estimate for one adjacent pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoseEstimate {
    Estimated(RelativePose),
    /// Fewer than the minimum number of usable matches.
    InsufficientMatches { matches: usize },
}

impl PoseEstimate {
    pub fn relative(&self) -> Option<&RelativePose> {
        match self {
            PoseEstimate::Estimated(r) => Some(r),
            PoseEstimate::InsufficientMatches { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    /// Sub-pixel position.
    pub pos: Vector2<f64>,
    /// Integer pixel the corner was detected at.
    pub x: usize,
    pub y: usize,
    pub response: f64,
}

/// Harris response map (zero within `border` pixels of the edge).
pub fn harris_response(lum: &[f64], w: usize, h: usize, k: f64, border: usize) -> Vec<f64> {
    let mut ixx = vec![0.0; w * h];
    let mut iyy = vec![0.0; w * h];
    let mut ixy = vec![0.0; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let gx = 0.5 * (lum[y * w + x + 1] - lum[y * w + x - 1]);
            let gy = 0.5 * (lum[(y + 1) * w + x] - lum[(y - 1) * w + x]);
            let i = y * w + x;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let g = gaussian_kernel(1.0);
    let r = (g.len() / 2) as isize;
    let smooth = |src: &[f64]| -> Vec<f64> {
        let mut tmp = vec![0.0; w * h];
        let mut out = vec![0.0; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut s = 0.0;
                for (i, kw) in g.iter().enumerate() {
                    let sx = (x + i as isize - r).clamp(0, w as isize - 1);
                    s += kw * src[(y * w as isize + sx) as usize];
                }
                tmp[(y * w as isize + x) as usize] = s;
            }
        }
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut s = 0.0;
                for (i, kw) in g.iter().enumerate() {
                    let sy = (y + i as isize - r).clamp(0, h as isize - 1);
                    s += kw * tmp[(sy * w as isize + x) as usize];
                }
                out[(y * w as isize + x) as usize] = s;
            }
        }
        out
    };
    let (sxx, syy, sxy) = (smooth(&ixx), smooth(&iyy), smooth(&ixy));
    let mut resp = vec![0.0; w * h];
    for y in border..h.saturating_sub(border) {
        for x in border..w.saturating_sub(border) {
            let i = y * w + x;
            let det = sxx[i] * syy[i] - sxy[i] * sxy[i];
            let tr = sxx[i] + syy[i];
            resp[i] = det - k * tr * tr;
        }
    }
    resp
}

/// Harris corners: local maxima above the absolute threshold, strongest
/// first, with greedy non-maximum suppression, capped at `top_k`.
pub fn detect_corners(img: &Image, params: &FeatureParams) -> Vec<Corner> {
    let (w, h) = (img.width(), img.height());
    let lum = img.luminance();
    let border = params.patch / 2 + 1;
    let resp = harris_response(&lum, w, h, params.harris_k, border);
    let mut cands: Vec<(usize, usize, f64)> = Vec::new();
    for y in border..h.saturating_sub(border) {
        for x in border..w.saturating_sub(border) {
            let v = resp[y * w + x];
            if v < params.harris_threshold {
                continue;
            }
            let is_max = (y - 1..=y + 1)
                .all(|yy| (x - 1..=x + 1).all(|xx| (xx == x && yy == y) || resp[yy * w + xx] < v));
            if is_max {
                cands.push((x, y, v));
            }
        }
    }
    // strongest first; ties broken by position for determinism
    cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
    let r = params.nms_radius as isize;
    let mut out: Vec<Corner> = Vec::new();
    for (x, y, v) in cands {
        if out.len() >= params.top_k {
            break;
        }
        let close = out.iter().any(|c| {
            (c.x as isize - x as isize).abs() <= r && (c.y as isize - y as isize).abs() <= r
        });
        if close {
            continue;
        }
        out.push(Corner {
            pos: subpixel(&resp, w, x, y),
            x,
            y,
            response: v,
        });
    }
    out
}

fn subpixel(resp: &[f64], w: usize, x: usize, y: usize) -> Vector2<f64> {
    let at = |xx: usize, yy: usize| resp[yy * w + xx];
    let offset = |l: f64, c: f64, r: f64| {
        let den = l - 2.0 * c + r;
        if den.abs() < 1e-300 {
            0.0
        } else {
            (0.5 * (l - r) / den).clamp(-0.5, 0.5)
        }
    };
    let c = at(x, y);
    Vector2::new(
        x as f64 + offset(at(x - 1, y), c, at(x + 1, y)),
        y as f64 + offset(at(x, y - 1), c, at(x, y + 1)),
    )
}

/// Color patch around a corner, zero-mean per channel and unit-norm overall;
/// `None` for flat patches.
fn patch_descriptor(img: &Image, c: &Corner, size: usize) -> Option<Vec<f64>> {
    let r = (size / 2) as isize;
    let n = size * size;
    let mut v = vec![0.0; 3 * n];
    let mut i = 0;
    for dy in -r..=r {
        for dx in -r..=r {
            let p = img.get((c.x as isize + dx) as usize, (c.y as isize + dy) as usize);
            for ch in 0..3 {
                v[ch * n + i] = p[ch];
            }
            i += 1;
        }
    }
    for ch in v.chunks_mut(n) {
        let mean = ch.iter().sum::<f64>() / n as f64;
        ch.iter_mut().for_each(|p| *p -= mean);
    }
    let norm = v.iter().map(|p| p * p).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return None;
    }
    v.iter_mut().for_each(|p| *p /= norm);
    Some(v)
}

/// Mutual-best NCC matches with score at least `ncc_min`, as index pairs.
pub fn match_corners(
    a: &Image,
    ca: &[Corner],
    b: &Image,
    cb: &[Corner],
    params: &FeatureParams,
) -> Vec<(usize, usize)> {
    let da: Vec<_> = ca.iter().map(|c| patch_descriptor(a, c, params.patch)).collect();
    let db: Vec<_> = cb.iter().map(|c| patch_descriptor(b, c, params.patch)).collect();
    let ncc = |i: usize, j: usize| -> f64 {
        match (&da[i], &db[j]) {
            (Some(p), Some(q)) => p.iter().zip(q).map(|(x, y)| x * y).sum(),
            _ => f64::NEG_INFINITY,
        }
    };
    let scores: Vec<Vec<f64>> = (0..ca.len()).map(|i| (0..cb.len()).map(|j| ncc(i, j)).collect()).collect();
    let argmax = |it: &mut dyn Iterator<Item = (usize, f64)>| {
        it.fold(None, |best: Option<(usize, f64)>, (k, s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((k, s)),
        })
    };
    let mut out = Vec::new();
    for i in 0..ca.len() {
        let Some((j, s)) = argmax(&mut scores[i].iter().copied().enumerate()) else {
            continue;
        };
        if s < params.ncc_min {
            continue;
        }
        let back = argmax(&mut (0..ca.len()).map(|ii| (ii, scores[ii][j])));
        if back.map(|(ii, _)| ii) == Some(i) {
            out.push((i, j));
        }
    }
    out
}

/// Least-squares rigid transform mapping `src` onto `dst` (Kabsch).
pub fn fit_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Pose {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut hmat = Matrix3::zeros();
    for (p, q) in src.iter().zip(dst) {
        hmat += (p - cs) * (q - cd).transpose();
    }
    let svd = hmat.svd(true, true);
    let (u, v_t) = (svd.u.expect("svd u"), svd.v_t.expect("svd v_t"));
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v * d * u.transpose();
    let rotation = Rotation::from_matrix_unchecked(r);
    Pose::new(rotation, cd - rotation.apply(&cs))
}

/// Rigid fit with one round of outlier rejection. Returns the pose and the
/// mean inlier residual.
pub fn robust_fit(src: &[Vector3<f64>], dst: &[Vector3<f64>], sigma: f64) -> (Pose, f64) {
    let residuals = |p: &Pose, idx: &[usize]| -> Vec<f64> {
        idx.iter().map(|&i| (p.apply(&src[i]) - dst[i]).norm()).collect()
    };
    let all: Vec<usize> = (0..src.len()).collect();
    let first = fit_rigid(src, dst);
    let res = residuals(&first, &all);
    let n = res.len() as f64;
    let mean = res.iter().sum::<f64>() / n;
    let std = (res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    let keep: Vec<usize> = all.iter().copied().filter(|&i| res[i] <= mean + sigma * std).collect();
    if keep.len() < 3 || keep.len() == all.len() {
        return (first, mean);
    }
    let (s2, d2): (Vec<_>, Vec<_>) = keep.iter().map(|&i| (src[i], dst[i])).unzip();
    let pose = fit_rigid(&s2, &d2);
    let res2 = residuals(&pose, &keep);
    (pose, res2.iter().sum::<f64>() / res2.len() as f64)
}

/// Indices of the largest group of matches that agree on pairwise 3D
/// distances, which a rigid motion preserves. Each match votes for the
/// matches whose distance to it is preserved within `tol + rel·d`; the
/// best-supported match seeds the group and every member must agree with it.
pub fn rigidity_filter(src: &[Vector3<f64>], dst: &[Vector3<f64>], tol: f64, rel: f64) -> Vec<usize> {
    let n = src.len();
    let agree = |i: usize, j: usize| {
        let (dp, dq) = ((src[i] - src[j]).norm(), (dst[i] - dst[j]).norm());
        (dp - dq).abs() <= tol + rel * dp.min(dq)
    };
    let support: Vec<usize> = (0..n).map(|i| (0..n).filter(|&j| j != i && agree(i, j)).count()).collect();
    let Some(seed) = (0..n).max_by_key(|&i| (support[i], std::cmp::Reverse(i))) else {
        return Vec::new();
    };
    let mut group = vec![seed];
    // greedily add the best-supported candidates that agree with the whole group
    let mut order: Vec<usize> = (0..n).filter(|&i| i != seed && agree(i, seed)).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(support[i]), i));
    for i in order {
        if group.iter().all(|&g| agree(i, g)) {
            group.push(i);
        }
    }
    group.sort_unstable();
    group
}

/// Matched 3D point pairs (camera frames of `a` and `b`) for one view pair.
pub fn matched_points(
    a: &RenderOutput,
    b: &RenderOutput,
    k: &Intrinsics,
    params: &FeatureParams,
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let ca = detect_corners(&a.image, params);
    let cb = detect_corners(&b.image, params);
    let matches = match_corners(&a.image, &ca, &b.image, &cb, params);
    let lift = |v: &RenderOutput, c: &Corner| -> Option<Vector3<f64>> {
        let s = sample_view(v, &c.pos, 0.05)?;
        unproject(&c.pos, s.depth, k).ok()
    };
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for (i, j) in matches {
        if let (Some(p), Some(q)) = (lift(a, &ca[i]), lift(b, &cb[j])) {
            src.push(p);
            dst.push(q);
        }
    }
    (src, dst)
}

/// Estimated transform from camera `m` to camera `m+1` for every adjacent pair.
pub fn estimate_relative_poses(
    views: &[RenderOutput],
    rig: &CameraRig,
    params: &FeatureParams,
) -> Result<Vec<PoseEstimate>, VerifierError> {
    if views.len() != rig.len() {
        return Err(VerifierError::RigMismatch {
            rig: rig.len(),
            views: views.len(),
        });
    }
    if views.len() < 2 {
        return Err(VerifierError::TooFewViews(views.len()));
    }
    Ok(views
        .windows(2)
        .map(|w| {
            let (src, dst) = matched_points(&w[0], &w[1], rig.intrinsics(), params);
            let keep = rigidity_filter(&src, &dst, params.rigidity_tol, params.rigidity_rel);
            if keep.len() < params.min_matches {
                return PoseEstimate::InsufficientMatches { matches: keep.len() };
            }
            let (src, dst): (Vec<_>, Vec<_>) = keep.iter().map(|&i| (src[i], dst[i])).unzip();
            let (pose, _) = robust_fit(&src, &dst, params.outlier_sigma);
            PoseEstimate::Estimated(RelativePose::from_pose(&pose))
        })
        .collect())
}

/// `exp(−mean pair residual)`; pairs with too few matches contribute zero
/// residual, so featureless views score perfectly.
pub fn sfm_reward(views: &[RenderOutput], k: &Intrinsics, params: &FeatureParams) -> Result<f64, VerifierError> {
    if views.len() < 2 {
        return Err(VerifierError::TooFewViews(views.len()));
    }
    let total: f64 = views
        .windows(2)
        .map(|w| {
            let (src, dst) = matched_points(&w[0], &w[1], k, params);
            if src.len() < params.min_matches {
                0.0
            } else {
                robust_fit(&src, &dst, params.outlier_sigma).1
            }
        })
        .sum();
    Ok((-total / (views.len() - 1) as f64).exp())
}
