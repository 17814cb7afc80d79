//! A small perceptual distance: pixel L1 blended with local-statistics
//! agreement across three dyadic scales. It penalizes texture loss that a
//! plain L1 would barely register.

use crate::error::VerifierError;
use crate::image::Image;

pub const SCALES: usize = 3;
pub const TILE: usize = 4;

fn downsample(img: &Image) -> Image {
    let (w, h) = ((img.width() / 2).max(1), (img.height() / 2).max(1));
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            let mut n = 0.0;
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let (sx, sy) = (2 * x + dx, 2 * y + dy);
                if sx < img.width() && sy < img.height() {
                    let p = img.get(sx, sy);
                    for ch in 0..3 {
                        acc[ch] += p[ch];
                    }
                    n += 1.0;
                }
            }
            data.push(acc.map(|v| v / n));
        }
    }
    Image::from_pixels(w, h, data)
}

/// Per-channel (mean, std) of every full `TILE×TILE` tile, row-major.
fn tile_stats(img: &Image) -> Vec<[(f64, f64); 3]> {
    let (tx, ty) = (img.width() / TILE, img.height() / TILE);
    let mut out = Vec::with_capacity(tx * ty);
    let n = (TILE * TILE) as f64;
    for by in 0..ty {
        for bx in 0..tx {
            let mut s = [0.0; 3];
            let mut s2 = [0.0; 3];
            for y in by * TILE..(by + 1) * TILE {
                for x in bx * TILE..(bx + 1) * TILE {
                    let p = img.get(x, y);
                    for ch in 0..3 {
                        s[ch] += p[ch];
                        s2[ch] += p[ch] * p[ch];
                    }
                }
            }
            let mut st = [(0.0, 0.0); 3];
            for ch in 0..3 {
                let m = s[ch] / n;
                st[ch] = (m, (s2[ch] / n - m * m).max(0.0).sqrt());
            }
            out.push(st);
        }
    }
    out
}

fn scale_distance(a: &Image, b: &Image) -> f64 {
    let l1 = a.mean_abs_diff(b);
    let (sa, sb) = (tile_stats(a), tile_stats(b));
    let stats = if sa.is_empty() {
        0.0
    } else {
        let sum: f64 = sa
            .iter()
            .zip(&sb)
            .map(|(ta, tb)| {
                (0..3)
                    .map(|ch| (ta[ch].0 - tb[ch].0).abs() + (ta[ch].1 - tb[ch].1).abs())
                    .sum::<f64>()
            })
            .sum();
        sum / (sa.len() * 3) as f64
    };
    0.5 * l1 + 0.5 * stats
}

/// Perceptual distance `D_perc` between two equally sized images.
pub fn perceptual_distance(a: &Image, b: &Image) -> Result<f64, VerifierError> {
    if !a.same_size(b) {
        return Err(VerifierError::SizeMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    let (mut a, mut b) = (a.clone(), b.clone());
    let mut total = 0.0;
    for s in 0..SCALES {
        if s > 0 {
            a = downsample(&a);
            b = downsample(&b);
        }
        total += scale_distance(&a, &b);
    }
    Ok(total / SCALES as f64)
}

/// `exp(−λ · D_perc(candidate, anchor))`.
pub fn anchor_reward(candidate: &Image, anchor: &Image, lambda: f64) -> Result<f64, VerifierError> {
    Ok((-lambda * perceptual_distance(candidate, anchor)?).exp())
}
