//! Parametric scenes and the deterministic ray caster that renders them.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{Intrinsics, Pose};
use crate::image::{DepthMap, Image, Rgb};

/// Multiplicative surface pattern applied on top of a primitive's albedo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Texture {
    None,
    Checker {
        period: f64,
        color_a: Rgb,
        color_b: Rgb,
    },
    /// Smooth lattice noise: factor = 1 + amplitude · n, n ∈ [−1, 1].
    ValueNoise {
        seed: u64,
        scale: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        /// Number of summed octaves, each at half the scale and amplitude.
        #[serde(default = "default_octaves")]
        octaves: u32,
    },
}

fn default_octaves() -> u32 {
    1
}

fn default_amplitude() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Two-sided rectangle spanned by `axis_u`, `axis_v` (normalized on use).
    TexturedQuad {
        center: [f64; 3],
        axis_u: [f64; 3],
        axis_v: [f64; 3],
        half_u: f64,
        half_v: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Primitive {
    pub id: u32,
    pub shape: Shape,
    pub albedo: Rgb,
    #[serde(default = "no_texture")]
    pub texture: Texture,
}

fn no_texture() -> Texture {
    Texture::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub background_color: Rgb,
    #[serde(default)]
    pub primitives: Vec<Primitive>,
}

impl Scene {
    pub fn empty(background_color: Rgb) -> Self {
        Scene {
            background_color,
            primitives: Vec::new(),
        }
    }

    pub fn primitive(&self, id: u32) -> Option<&Primitive> {
        self.primitives.iter().find(|p| p.id == id)
    }

    pub fn primitive_mut(&mut self, id: u32) -> Option<&mut Primitive> {
        self.primitives.iter_mut().find(|p| p.id == id)
    }

    /// Checks id uniqueness, finiteness and positive sizes.
    pub fn validate(&self) -> Result<(), String> {
        let mut ids: Vec<u32> = self.primitives.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err("primitive ids must be unique".into());
        }
        for p in &self.primitives {
            let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
            let ok = finite(&p.albedo)
                && match &p.shape {
                    Shape::Sphere { center, radius } => finite(center) && *radius > 0.0,
                    Shape::TexturedQuad {
                        center,
                        axis_u,
                        axis_v,
                        half_u,
                        half_v,
                    } => {
                        finite(center)
                            && finite(axis_u)
                            && finite(axis_v)
                            && *half_u > 0.0
                            && *half_v > 0.0
                            && Vector3::from(*axis_u)
                                .cross(&Vector3::from(*axis_v))
                                .norm()
                                > 1e-9
                    }
                };
            if !ok {
                return Err(format!("primitive {} has invalid geometry", p.id));
            }
        }
        Ok(())
    }

    /// The built-in evaluation scene: a value-noise back wall, a checkered
    /// floor strip and three textured spheres. Primitive 1 is the edit target.
    pub fn default_scene() -> Self {
        Scene {
            background_color: [0.05, 0.05, 0.08],
            primitives: vec![
                Primitive {
                    id: 1,
                    shape: Shape::Sphere {
                        center: [0.0, 0.0, 0.0],
                        radius: 0.8,
                    },
                    albedo: [0.55, 0.45, 0.35],
                    texture: Texture::ValueNoise {
                        seed: 11,
                        scale: 0.36,
                        amplitude: 0.35,
                        octaves: 1,
                    },
                },
                Primitive {
                    id: 2,
                    shape: Shape::Sphere {
                        center: [-1.7, 0.6, -0.8],
                        radius: 0.5,
                    },
                    albedo: [0.3, 0.55, 0.4],
                    texture: Texture::ValueNoise {
                        seed: 23,
                        scale: 0.4,
                        amplitude: 0.3,
                        octaves: 1,
                    },
                },
                Primitive {
                    id: 3,
                    shape: Shape::Sphere {
                        center: [1.6, -0.5, -0.5],
                        radius: 0.55,
                    },
                    albedo: [0.35, 0.4, 0.65],
                    texture: Texture::ValueNoise {
                        seed: 37,
                        scale: 0.4,
                        amplitude: 0.3,
                        octaves: 1,
                    },
                },
                Primitive {
                    id: 4,
                    shape: Shape::TexturedQuad {
                        center: [0.0, 0.0, -2.5],
                        axis_u: [1.0, 0.0, 0.0],
                        axis_v: [0.0, 1.0, 0.0],
                        half_u: 16.0,
                        half_v: 10.0,
                    },
                    albedo: [0.6, 0.58, 0.52],
                    texture: Texture::ValueNoise {
                        seed: 5,
                        scale: 0.56,
                        amplitude: 0.35,
                        octaves: 1,
                    },
                },
            ],
        }
    }
}

/// A ray–primitive hit: camera-z depth and surface color.
#[derive(Debug, Clone, Copy)]
struct Hit {
    s: f64,
    color: Rgb,
}

impl Primitive {
    /// Intersects `origin + s·dir` (s > 0) and shades the nearest hit.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        match &self.shape {
            Shape::Sphere { center, radius } => {
                let c = Vector3::from(*center);
                let oc = origin - c;
                let a = dir.dot(dir);
                let b = 2.0 * dir.dot(&oc);
                let cc = oc.dot(&oc) - radius * radius;
                let disc = b * b - 4.0 * a * cc;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // numerically stable roots
                let q = -0.5 * (b + b.signum() * sq);
                let (mut s0, mut s1) = (q / a, cc / q);
                if s0 > s1 {
                    std::mem::swap(&mut s0, &mut s1);
                }
                let s = if s0 > 1e-9 {
                    s0
                } else if s1 > 1e-9 {
                    s1
                } else {
                    return None;
                };
                let p = origin + dir * s;
                let local = (p - c) / *radius;
                Some(Hit {
                    s,
                    color: self.shade(&local),
                })
            }
            Shape::TexturedQuad {
                center,
                axis_u,
                axis_v,
                half_u,
                half_v,
            } => {
                let c = Vector3::from(*center);
                let u = Vector3::from(*axis_u).normalize();
                let v = Vector3::from(*axis_v).normalize();
                let n = u.cross(&v);
                let denom = n.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let s = n.dot(&(c - origin)) / denom;
                if s <= 1e-9 {
                    return None;
                }
                let d = origin + dir * s - c;
                let (lu, lv) = (d.dot(&u), d.dot(&v));
                if lu.abs() > *half_u || lv.abs() > *half_v {
                    return None;
                }
                Some(Hit {
                    s,
                    color: self.shade(&Vector3::new(lu, lv, 0.0)),
                })
            }
        }
    }

    fn shade(&self, local: &Vector3<f64>) -> Rgb {
        let f = texture_factor(&self.texture, local);
        [
            (self.albedo[0] * f[0]).clamp(0.0, 1.0),
            (self.albedo[1] * f[1]).clamp(0.0, 1.0),
            (self.albedo[2] * f[2]).clamp(0.0, 1.0),
        ]
    }
}

fn texture_factor(t: &Texture, local: &Vector3<f64>) -> Rgb {
    match t {
        Texture::None => [1.0; 3],
        Texture::Checker {
            period,
            color_a,
            color_b,
        } => {
            let cell = |x: f64| (x / period).floor() as i64;
            let parity = cell(local.x) + cell(local.y) + cell(local.z);
            if parity.rem_euclid(2) == 0 {
                *color_a
            } else {
                *color_b
            }
        }
        Texture::ValueNoise {
            seed,
            scale,
            amplitude,
            octaves,
        } => {
            let n = fractal_noise(*seed, &(local / *scale), *octaves);
            [1.0 + amplitude * n; 3]
        }
    }
}

fn hash3(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [x, y, z] {
        h ^= (v as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = h.rotate_left(27).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Trilinear lattice noise with quintic fade, in `[−1, 1]`.
pub fn value_noise(seed: u64, p: &Vector3<f64>) -> f64 {
    let (fx, fy, fz) = (p.x.floor(), p.y.floor(), p.z.floor());
    let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
    let (tx, ty, tz) = (fade(p.x - fx), fade(p.y - fy), fade(p.z - fz));
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let mut acc = [0.0; 2];
    for (dz, slot) in acc.iter_mut().enumerate() {
        let z = iz + dz as i64;
        let c00 = hash3(seed, ix, iy, z);
        let c10 = hash3(seed, ix + 1, iy, z);
        let c01 = hash3(seed, ix, iy + 1, z);
        let c11 = hash3(seed, ix + 1, iy + 1, z);
        *slot = lerp(lerp(c00, c10, tx), lerp(c01, c11, tx), ty);
    }
    lerp(acc[0], acc[1], tz)
}

/// Sum of `octaves` noise layers at doubling frequency and halving weight,
/// normalized back to `[−1, 1]`.
pub fn fractal_noise(seed: u64, p: &Vector3<f64>, octaves: u32) -> f64 {
    let (mut sum, mut norm, mut amp, mut freq) = (0.0, 0.0, 1.0, 1.0);
    for o in 0..octaves.max(1) {
        sum += amp * value_noise(seed.wrapping_add(o as u64 * 0x51ED), &(p * freq));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

/// Image, depth and validity for one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    pub depth: DepthMap,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn valid(&self, x: usize, y: usize) -> bool {
        self.depth.is_valid(x, y)
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.depth.values().iter().map(|d| *d > 0.0).collect()
    }
}

/// Color and depth seen along the ray through a continuous pixel position.
pub fn cast_pixel(scene: &Scene, pose: &Pose, k: &Intrinsics, px: &Vector2<f64>) -> (Rgb, f64) {
    let rt = pose.rotation.transpose();
    let origin = pose.center();
    let dir = rt.apply(&k.ray(px));
    let mut best: Option<Hit> = None;
    for prim in &scene.primitives {
        if let Some(h) = prim.intersect(&origin, &dir) {
            if best.map_or(true, |b| h.s < b.s) {
                best = Some(h);
            }
        }
    }
    match best {
        Some(h) => (h.color, h.s),
        None => (scene.background_color, 0.0),
    }
}

/// Nearest-hit ray cast through every pixel center with flat shading.
pub fn render_view(scene: &Scene, pose: &Pose, k: &Intrinsics) -> RenderOutput {
    let (w, h) = (k.width, k.height);
    let mut pixels = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (c, d) = cast_pixel(scene, pose, k, &Vector2::new(x as f64, y as f64));
            pixels.push(c);
            depth.push(d);
        }
    }
    RenderOutput {
        image: Image::from_pixels(w, h, pixels),
        depth: DepthMap::new(w, h, depth),
    }
}
