//! Oracle multi-view confidence: each view's own depth is pushed into its
//! neighbors with the rig poses and compared against what they show.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::VerifierError;
use crate::geometry::{compose, invert, warp_with_relative, Pose};
use crate::image::{bilinear_cell, Rgb};
use crate::rig::CameraRig;
use crate::scene::RenderOutput;

use super::ConfidenceMap;

/// Tunables of the oracle confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfidenceParams {
    /// Photometric sharpness κ.
    pub kappa: f64,
    /// Geometric sharpness κ_g.
    pub kappa_geo: f64,
    /// Occlusion tolerance τ_occ in scene units.
    pub tau_occ: f64,
}

impl Default for ConfidenceParams {
    fn default() -> Self {
        ConfidenceParams {
            kappa: 10.0,
            kappa_geo: 5.0,
            tau_occ: 0.05,
        }
    }
}

/// What a neighbor shows at a continuous pixel position.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NeighborSample {
    pub depth: f64,
    pub color: Rgb,
}

/// Samples depth and color of `view` at `p`. Bilinear when the four taps lie
/// on one surface (depth spread within `tau`), nearest tap otherwise.
pub(crate) fn sample_view(view: &RenderOutput, p: &Vector2<f64>, tau: f64) -> Option<NeighborSample> {
    let (w, h) = (view.width(), view.height());
    let (x0, y0, fx, fy) = bilinear_cell(p, w, h)?;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let taps = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)];
    let depths = taps.map(|(x, y)| view.depth.get(x, y));
    let (lo, hi) = depths
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), d| (a.min(*d), b.max(*d)));
    if lo > 0.0 && hi - lo <= tau {
        let wts = [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ];
        let mut color = [0.0; 3];
        let mut depth = 0.0;
        for (i, (x, y)) in taps.iter().enumerate() {
            let c = view.image.get(*x, *y);
            for ch in 0..3 {
                color[ch] += wts[i] * c[ch];
            }
            depth += wts[i] * depths[i];
        }
        return Some(NeighborSample { depth, color });
    }
    let (nx, ny) = (p.x.round() as usize, p.y.round() as usize);
    Some(NeighborSample {
        depth: view.depth.get(nx, ny),
        color: view.image.get(nx, ny),
    })
}

fn l1_mean(a: &Rgb, b: &Rgb) -> f64 {
    ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0
}

/// Per-view depth confidence (geometric agreement) and point confidence
/// (photometric agreement) against the adjacent views.
pub fn photoconsistency_confidence(
    views: &[RenderOutput],
    rig: &CameraRig,
    params: &ConfidenceParams,
) -> Result<(Vec<ConfidenceMap>, Vec<ConfidenceMap>), VerifierError> {
    if views.len() != rig.len() {
        return Err(VerifierError::RigMismatch {
            rig: rig.len(),
            views: views.len(),
        });
    }
    if views.len() < 2 {
        return Err(VerifierError::TooFewViews(views.len()));
    }
    let m_views = views.len();
    let mut conf_depth = Vec::with_capacity(m_views);
    let mut conf_point = Vec::with_capacity(m_views);
    for m in 0..m_views {
        let neighbors: Vec<(usize, Pose)> = [m.checked_sub(1), Some(m + 1)]
            .into_iter()
            .flatten()
            .filter(|n| *n < m_views)
            .map(|n| (n, compose(rig.pose(n), &invert(rig.pose(m)))))
            .collect();
        let (d, p) = view_confidence(&views[m], &neighbors, views, rig, params);
        conf_depth.push(d);
        conf_point.push(p);
    }
    Ok((conf_depth, conf_point))
}

fn view_confidence(
    src: &RenderOutput,
    neighbors: &[(usize, Pose)],
    views: &[RenderOutput],
    rig: &CameraRig,
    params: &ConfidenceParams,
) -> (ConfidenceMap, ConfidenceMap) {
    let k = rig.intrinsics();
    let (w, h) = (src.width(), src.height());
    let mut geo = vec![0.0; w * h];
    let mut photo = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = src.depth.get(x, y);
            if d <= 0.0 {
                continue;
            }
            let px = Vector2::new(x as f64, y as f64);
            let color = src.image.get(x, y);
            let (mut e_geo, mut e_photo, mut count) = (0.0, 0.0, 0usize);
            for (n, rel) in neighbors {
                let Ok(wp) = warp_with_relative(&px, d, rel, k) else {
                    continue;
                };
                if wp.out_of_frame {
                    continue;
                }
                let Some(s) = sample_view(&views[*n], &wp.pixel, params.tau_occ) else {
                    continue;
                };
                // something nearer in the neighbor hides this point
                if s.depth > 0.0 && wp.depth > s.depth + params.tau_occ {
                    continue;
                }
                e_geo += (wp.depth - s.depth).abs();
                e_photo += l1_mean(&color, &s.color);
                count += 1;
            }
            if count > 0 {
                let i = y * w + x;
                let c = count as f64;
                geo[i] = (-params.kappa_geo * e_geo / c).exp();
                photo[i] = (-params.kappa * e_photo / c).exp();
                valid[i] = true;
            }
        }
    }
    (
        ConfidenceMap::new(w, h, geo, valid.clone()),
        ConfidenceMap::new(w, h, photo, valid),
    )
}
