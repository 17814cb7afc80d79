//! Photometric reprojection loss (SSIM/L1 blend) and the warp-based reward
//! built on it.

use nalgebra::Vector2;

use crate::error::VerifierError;
use crate::geometry::{compose, invert, warp_with_relative, Intrinsics, Pose};
use crate::image::{Image, Rgb};
use crate::rig::CameraRig;
use crate::scene::RenderOutput;

use super::confidence::sample_view;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const SSIM_WEIGHT: f64 = 0.85;

/// Occlusion tolerance used when synthesizing a target from a source view.
pub const PH_LOSS_TAU_OCC: f64 = 0.05;

/// Per-pixel SSIM over 3×3 windows (edge-clamped), averaged over channels.
pub fn ssim_map(a: &Image, b: &Image) -> Vec<f64> {
    let (w, h) = (a.width(), a.height());
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for ch in 0..3 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        let (va, vb) = (a.get(sx, sy)[ch], b.get(sx, sy)[ch]);
                        ma += va;
                        mb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                }
                let n = 9.0;
                let (ma, mb) = (ma / n, mb / n);
                let va = saa / n - ma * ma;
                let vb = sbb / n - mb * mb;
                let cov = sab / n - ma * mb;
                let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
                s += num / den;
            }
            out[y * w + x] = s / 3.0;
        }
    }
    out
}

/// Synthesizes `target` from `source` by inverse warping with the target's
/// depth. Returns the synthesized image (holes filled with the target's own
/// color) and the mask of pixels that received a source sample.
pub fn synthesize(
    target: &RenderOutput,
    source: &RenderOutput,
    tgt_to_src: &Pose,
    k: &Intrinsics,
) -> (Image, Vec<bool>) {
    let (w, h) = (target.width(), target.height());
    let mut pixels: Vec<Rgb> = target.image.pixels().to_vec();
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = target.depth.get(x, y);
            if d <= 0.0 {
                continue;
            }
            let Ok(wp) = warp_with_relative(&Vector2::new(x as f64, y as f64), d, tgt_to_src, k)
            else {
                continue;
            };
            if wp.out_of_frame {
                continue;
            }
            let Some(s) = sample_view(source, &wp.pixel, PH_LOSS_TAU_OCC) else {
                continue;
            };
            if s.depth > 0.0 && wp.depth > s.depth + PH_LOSS_TAU_OCC {
                continue;
            }
            pixels[y * w + x] = s.color;
            mask[y * w + x] = true;
        }
    }
    (Image::from_pixels(w, h, pixels), mask)
}

/// Mean of `0.85·(1−SSIM)/2 + 0.15·L1` over masked pixels; `None` when the
/// mask is empty.
pub fn masked_photometric_error(target: &Image, synth: &Image, mask: &[bool]) -> Option<f64> {
    let ssim = ssim_map(target, synth);
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, ok) in mask.iter().enumerate() {
        if !ok {
            continue;
        }
        let (a, b) = (target.pixels()[i], synth.pixels()[i]);
        let l1 = ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0;
        let e = SSIM_WEIGHT * (1.0 - ssim[i]) * 0.5 + (1.0 - SSIM_WEIGHT) * l1;
        sum += e.max(0.0);
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Photometric reprojection loss over every adjacent ordered view pair,
/// using each view's own depth and the given poses.
pub fn ph_loss(views: &[RenderOutput], poses: &[Pose], k: &Intrinsics) -> Result<f64, VerifierError> {
    if views.len() != poses.len() {
        return Err(VerifierError::LengthMismatch(views.len(), poses.len()));
    }
    if views.len() < 2 {
        return Err(VerifierError::TooFewViews(views.len()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for m in 0..views.len() - 1 {
        for (t, s) in [(m, m + 1), (m + 1, m)] {
            let tgt_to_src = compose(&poses[s], &invert(&poses[t]));
            let (synth, mask) = synthesize(&views[t], &views[s], &tgt_to_src, k);
            if let Some(e) = masked_photometric_error(&views[t].image, &synth, &mask) {
                total += e;
                pairs += 1;
            }
        }
    }
    Ok(if pairs == 0 { 0.0 } else { total / pairs as f64 })
}

/// `exp(−Ph-Loss)` with the rig's ground-truth poses.
pub fn warp_reward(views: &[RenderOutput], rig: &CameraRig) -> Result<f64, VerifierError> {
    if views.len() != rig.len() {
        return Err(VerifierError::RigMismatch {
            rig: rig.len(),
            views: views.len(),
        });
    }
    Ok((-ph_loss(views, rig.poses(), rig.intrinsics())?).exp())
}
