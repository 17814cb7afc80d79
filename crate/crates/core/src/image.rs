//! Float RGB images, depth maps and the pixel-level operations shared by the
//! renderer and the verifiers.

use std::io::{self, Write};

use nalgebra::Vector2;

pub type Rgb = [f64; 3];

/// Row-major RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        Image {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, data: Vec<Rgb>) -> Self {
        assert_eq!(data.len(), width * height, "pixel count");
        Image {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        self.data[y * self.width + x] = c;
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Bilinear sample at a continuous pixel position, `None` outside the
    /// rectangle spanned by pixel centers.
    pub fn sample_bilinear(&self, p: &Vector2<f64>) -> Option<Rgb> {
        let (x0, y0, fx, fy) = bilinear_cell(p, self.width, self.height)?;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (a, b, c, d) = (
            self.get(x0, y0),
            self.get(x1, y0),
            self.get(x0, y1),
            self.get(x1, y1),
        );
        let mut out = [0.0; 3];
        for ch in 0..3 {
            let top = a[ch] + (b[ch] - a[ch]) * fx;
            let bot = c[ch] + (d[ch] - c[ch]) * fx;
            out[ch] = top + (bot - top) * fy;
        }
        Some(out)
    }

    /// Per-channel mean.
    pub fn mean(&self) -> Rgb {
        let mut m = [0.0; 3];
        for p in &self.data {
            for ch in 0..3 {
                m[ch] += p[ch];
            }
        }
        let n = self.data.len().max(1) as f64;
        m.map(|v| v / n)
    }

    /// Luminance plane (Rec. 601 weights).
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    /// `pixel ← mean + contrast · (pixel − mean)`, per channel.
    pub fn with_contrast(&self, contrast: f64) -> Image {
        if contrast == 1.0 {
            return self.clone();
        }
        let m = self.mean();
        let data = self
            .data
            .iter()
            .map(|p| {
                let mut q = [0.0; 3];
                for ch in 0..3 {
                    q[ch] = (m[ch] + contrast * (p[ch] - m[ch])).clamp(0.0, 1.0);
                }
                q
            })
            .collect();
        Image::from_pixels(self.width, self.height, data)
    }

    /// Separable Gaussian blur truncated at 3σ; taps falling outside the
    /// image are dropped and the remaining weights renormalized.
    pub fn gaussian_blur(&self, sigma: f64) -> Image {
        if sigma <= 1e-6 {
            return self.clone();
        }
        let kernel = gaussian_kernel(sigma);
        let r = (kernel.len() / 2) as isize;
        let (w, h) = (self.width as isize, self.height as isize);
        let pass = |src: &[Rgb], horizontal: bool| -> Vec<Rgb> {
            let mut out = vec![[0.0; 3]; src.len()];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = [0.0; 3];
                    let mut wsum = 0.0;
                    for (i, kw) in kernel.iter().enumerate() {
                        let o = i as isize - r;
                        let (sx, sy) = if horizontal { (x + o, y) } else { (x, y + o) };
                        if sx < 0 || sy < 0 || sx >= w || sy >= h {
                            continue;
                        }
                        let p = src[(sy * w + sx) as usize];
                        for ch in 0..3 {
                            acc[ch] += kw * p[ch];
                        }
                        wsum += kw;
                    }
                    out[(y * w + x) as usize] = acc.map(|v| v / wsum);
                }
            }
            out
        };
        let tmp = pass(&self.data, true);
        Image::from_pixels(self.width, self.height, pass(&tmp, false))
    }

    /// Mean magnitude of the luminance gradient (forward differences).
    pub fn high_frequency_energy(&self) -> f64 {
        gradient_energy(&self.luminance(), self.width, self.height)
    }

    /// Mean luminance variance inside 4×4 tiles.
    pub fn texture_energy(&self) -> f64 {
        tile_variance(&self.luminance(), self.width, self.height, 4)
    }

    /// Binary PPM (P6), 8 bits per channel, rows top to bottom.
    pub fn write_ppm<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.data.len() * 3);
        for p in &self.data {
            for ch in p {
                buf.push(to_u8(*ch));
            }
        }
        out.write_all(&buf)
    }

    /// Mean absolute difference over all pixels and channels.
    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        let n = (self.data.len() * 3).max(1) as f64;
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).abs()).sum::<f64>())
            .sum::<f64>()
            / n
    }
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Normalized Gaussian taps out to `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Integer cell and fractional offsets for bilinear lookup.
#[inline]
pub fn bilinear_cell(
    p: &Vector2<f64>,
    width: usize,
    height: usize,
) -> Option<(usize, usize, f64, f64)> {
    if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= (width - 1) as f64 && p.y <= (height - 1) as f64) {
        return None;
    }
    let x0 = p.x.floor() as usize;
    let y0 = p.y.floor() as usize;
    Some((x0, y0, p.x - x0 as f64, p.y - y0 as f64))
}

pub fn gradient_energy(plane: &[f64], width: usize, height: usize) -> f64 {
    if width < 2 || height < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for y in 0..height - 1 {
        for x in 0..width - 1 {
            let c = plane[y * width + x];
            let gx = plane[y * width + x + 1] - c;
            let gy = plane[(y + 1) * width + x] - c;
            sum += (gx * gx + gy * gy).sqrt();
        }
    }
    sum / ((width - 1) * (height - 1)) as f64
}

pub fn tile_variance(plane: &[f64], width: usize, height: usize, tile: usize) -> f64 {
    let (tx, ty) = (width / tile, height / tile);
    if tx == 0 || ty == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for by in 0..ty {
        for bx in 0..tx {
            let mut s = 0.0;
            let mut s2 = 0.0;
            for y in by * tile..(by + 1) * tile {
                for x in bx * tile..(bx + 1) * tile {
                    let v = plane[y * width + x];
                    s += v;
                    s2 += v * v;
                }
            }
            let n = (tile * tile) as f64;
            total += (s2 / n - (s / n).powi(2)).max(0.0);
        }
    }
    total / (tx * ty) as f64
}

/// Per-pixel depth in scene units along the camera z axis; 0 marks no hit.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "depth count");
        DepthMap {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.get(x, y) > 0.0
    }

    /// Binary 16-bit PGM (P5, big-endian) of depth in millimeters-of-unit,
    /// saturated at 65535.
    pub fn write_pgm16<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "P5\n{} {}\n65535\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.data.len() * 2);
        for d in &self.data {
            let v = (d * 1000.0).round().clamp(0.0, 65535.0) as u16;
            buf.extend_from_slice(&v.to_be_bytes());
        }
        out.write_all(&buf)
    }
}

/// Writes a scalar field in `[0, 1]` as an 8-bit PGM.
pub fn write_pgm8<W: Write>(
    mut out: W,
    width: usize,
    height: usize,
    values: &[f64],
) -> io::Result<()> {
    write!(out, "P5\n{} {}\n255\n", width, height)?;
    let buf: Vec<u8> = values.iter().map(|v| to_u8(*v)).collect();
    out.write_all(&buf)
}
