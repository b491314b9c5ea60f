//! The fifteen common image corruptions at severities 1..=5.
//!
//! These are procedural, seed-deterministic analogs of the standard
//! corruption-benchmark suite, sized for small rasters (28x28 / 32x32). The
//! weather corruptions replace photographic overlays with seeded value-noise
//! textures so synthesis needs no external assets.

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use std::fmt;

use crate::data::ImageTensor;
use crate::rng;

use super::AugmentError;

/// Corruption families, named after the standard benchmark suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorruptionType {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    GlassBlur,
    MotionBlur,
    ZoomBlur,
    Snow,
    Frost,
    Fog,
    Brightness,
    Contrast,
    ElasticTransform,
    Pixelate,
    JpegCompression,
}

/// All fifteen corruption types in canonical order.
pub const ALL_CORRUPTIONS: [CorruptionType; 15] = [
    CorruptionType::GaussianNoise,
    CorruptionType::ShotNoise,
    CorruptionType::ImpulseNoise,
    CorruptionType::DefocusBlur,
    CorruptionType::GlassBlur,
    CorruptionType::MotionBlur,
    CorruptionType::ZoomBlur,
    CorruptionType::Snow,
    CorruptionType::Frost,
    CorruptionType::Fog,
    CorruptionType::Brightness,
    CorruptionType::Contrast,
    CorruptionType::ElasticTransform,
    CorruptionType::Pixelate,
    CorruptionType::JpegCompression,
];

impl CorruptionType {
    pub fn name(&self) -> &'static str {
        match self {
            CorruptionType::GaussianNoise => "gaussian_noise",
            CorruptionType::ShotNoise => "shot_noise",
            CorruptionType::ImpulseNoise => "impulse_noise",
            CorruptionType::DefocusBlur => "defocus_blur",
            CorruptionType::GlassBlur => "glass_blur",
            CorruptionType::MotionBlur => "motion_blur",
            CorruptionType::ZoomBlur => "zoom_blur",
            CorruptionType::Snow => "snow",
            CorruptionType::Frost => "frost",
            CorruptionType::Fog => "fog",
            CorruptionType::Brightness => "brightness",
            CorruptionType::Contrast => "contrast",
            CorruptionType::ElasticTransform => "elastic_transform",
            CorruptionType::Pixelate => "pixelate",
            CorruptionType::JpegCompression => "jpeg_compression",
        }
    }

    pub fn parse(name: &str) -> Result<Self, AugmentError> {
        ALL_CORRUPTIONS
            .iter()
            .copied()
            .find(|c| c.name() == name)
            .ok_or_else(|| AugmentError::UnknownCorruption(name.to_string()))
    }
}

impl fmt::Display for CorruptionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Apply `ctype` at `severity` in 1..=5, deterministically under `seed`.
pub fn apply_corruption(
    img: &ImageTensor,
    ctype: CorruptionType,
    severity: u8,
    seed: u64,
) -> Result<ImageTensor, AugmentError> {
    if !(1..=5).contains(&severity) {
        return Err(AugmentError::BadSeverity(severity as i64));
    }
    let s = (severity - 1) as usize;
    let mut rng = rng::derived_stream(seed, "corruption", &[ctype as u64, severity as u64]);
    let out = match ctype {
        CorruptionType::GaussianNoise => {
            let sigma = [0.04, 0.06, 0.08, 0.09, 0.10][s];
            let normal = Normal::new(0.0f64, sigma).unwrap();
            map_pixels(img, |v| (v + normal.sample(&mut rng) as f32).clamp(0.0, 1.0))
        }
        CorruptionType::ShotNoise => {
            let scale = [500.0, 250.0, 100.0, 75.0, 50.0][s];
            map_pixels(img, |v| {
                let lambda = (v as f64 * scale).max(1e-9);
                let draw = Poisson::new(lambda).unwrap().sample(&mut rng);
                ((draw / scale) as f32).clamp(0.0, 1.0)
            })
        }
        CorruptionType::ImpulseNoise => {
            let fraction = [0.01, 0.02, 0.03, 0.05, 0.07][s];
            map_pixels(img, |v| {
                if rng.gen::<f64>() < fraction {
                    if rng.gen::<bool>() {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    v
                }
            })
        }
        CorruptionType::DefocusBlur => {
            let radius = [1.0, 1.5, 2.0, 2.5, 3.0][s];
            let kernel = disk_kernel(radius);
            convolve_replicate(img, &kernel)
        }
        CorruptionType::GlassBlur => {
            let iterations = [1usize, 1, 2, 2, 3][s];
            glass_shuffle(img, iterations, &mut rng)
        }
        CorruptionType::MotionBlur => {
            let length = [3usize, 5, 7, 9, 11][s];
            let angle = rng.gen::<f32>() * std::f32::consts::PI;
            motion_blur(img, length, angle)
        }
        CorruptionType::ZoomBlur => {
            let max_zoom = [1.06f32, 1.11, 1.16, 1.21, 1.26][s];
            zoom_blur(img, max_zoom)
        }
        CorruptionType::Snow => {
            let density = [0.02, 0.04, 0.06, 0.08, 0.10][s];
            let dim = [0.95f32, 0.90, 0.85, 0.80, 0.75][s];
            snow(img, density, dim, &mut rng)
        }
        CorruptionType::Frost => {
            let keep = [0.90f32, 0.85, 0.80, 0.75, 0.70][s];
            let add = [0.20f32, 0.25, 0.30, 0.35, 0.40][s];
            let (_, h, w) = img.dim();
            let texture = value_noise(h, w, 4, &mut rng);
            blend_field(img, &texture, keep, add)
        }
        CorruptionType::Fog => {
            let t = [0.15f32, 0.25, 0.35, 0.45, 0.55][s];
            let (_, h, w) = img.dim();
            let field = value_noise(h, w, 8, &mut rng);
            let mut out = img.pixels().clone();
            for mut ch in out.axis_iter_mut(Axis(0)) {
                ndarray::Zip::from(&mut ch).and(&field).for_each(|v, &l| {
                    *v = (*v * (1.0 - t) + t * (0.7 * l + 0.3)).clamp(0.0, 1.0);
                });
            }
            ImageTensor::from_valid(out)
        }
        CorruptionType::Brightness => {
            let shift = [0.05, 0.10, 0.15, 0.20, 0.25][s];
            map_pixels(img, |v| (v + shift).clamp(0.0, 1.0))
        }
        CorruptionType::Contrast => {
            let gain = [0.75f32, 0.60, 0.45, 0.30, 0.15][s];
            let mean = img.luminance().mean().unwrap_or(0.5);
            map_pixels(img, |v| ((v - mean) * gain + mean).clamp(0.0, 1.0))
        }
        CorruptionType::ElasticTransform => {
            let alpha = [0.5f32, 1.0, 1.5, 2.0, 2.5][s];
            elastic_warp(img, alpha, &mut rng)
        }
        CorruptionType::Pixelate => {
            let keep = [0.75f32, 0.65, 0.55, 0.45, 0.35][s];
            pixelate(img, keep)
        }
        CorruptionType::JpegCompression => {
            let quality = [25u8, 18, 15, 10, 7][s];
            jpeg_roundtrip(img, quality)?
        }
    };
    Ok(out)
}

fn map_pixels(img: &ImageTensor, mut f: impl FnMut(f32) -> f32) -> ImageTensor {
    let mut out = img.pixels().clone();
    // scan order is fixed (standard layout), so seeded draws replay exactly
    for v in out.iter_mut() {
        *v = f(*v);
    }
    ImageTensor::from_valid(out)
}

fn disk_kernel(radius: f32) -> Array2<f32> {
    let r = radius.ceil() as i64;
    let size = (2 * r + 1) as usize;
    let mut k = Array2::zeros((size, size));
    let mut total = 0.0f32;
    for y in 0..size {
        for x in 0..size {
            let dy = y as f32 - r as f32;
            let dx = x as f32 - r as f32;
            if dy * dy + dx * dx <= radius * radius + 1e-6 {
                k[(y, x)] = 1.0;
                total += 1.0;
            }
        }
    }
    k.mapv_inplace(|v| v / total);
    k
}

fn convolve_replicate(img: &ImageTensor, kernel: &Array2<f32>) -> ImageTensor {
    let (c, h, w) = img.dim();
    let (kh, kw) = kernel.dim();
    let (oy, ox) = (kh as i64 / 2, kw as i64 / 2);
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        let ch = img.pixels().index_axis(Axis(0), ci);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let sy = (y as i64 + ky as i64 - oy).clamp(0, h as i64 - 1) as usize;
                        let sx = (x as i64 + kx as i64 - ox).clamp(0, w as i64 - 1) as usize;
                        acc += kernel[(ky, kx)] * ch[(sy, sx)];
                    }
                }
                out[(ci, y, x)] = acc.clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::from_valid(out)
}

fn glass_shuffle(img: &ImageTensor, iterations: usize, rng: &mut impl Rng) -> ImageTensor {
    let (c, h, w) = img.dim();
    let mut out = img.pixels().clone();
    for _ in 0..iterations {
        for y in 0..h {
            for x in 0..w {
                let dy = rng.gen_range(-1i64..=1);
                let dx = rng.gen_range(-1i64..=1);
                let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                for ci in 0..c {
                    out.swap((ci, y, x), (ci, sy, sx));
                }
            }
        }
    }
    ImageTensor::from_valid(out)
}

fn motion_blur(img: &ImageTensor, length: usize, angle: f32) -> ImageTensor {
    let (c, h, w) = img.dim();
    let (sin_a, cos_a) = angle.sin_cos();
    let half = (length as f32 - 1.0) / 2.0;
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for tap in 0..length {
                    let t = tap as f32 - half;
                    let sy = (y as f32 + t * sin_a).clamp(0.0, h as f32 - 1.0);
                    let sx = (x as f32 + t * cos_a).clamp(0.0, w as f32 - 1.0);
                    acc += img.sample_bilinear(ci, sy, sx);
                }
                out[(ci, y, x)] = (acc / length as f32).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::from_valid(out)
}

fn zoom_blur(img: &ImageTensor, max_zoom: f32) -> ImageTensor {
    let (c, h, w) = img.dim();
    let cy = (h as f32 - 1.0) / 2.0;
    let cx = (w as f32 - 1.0) / 2.0;
    let zooms: Vec<f32> = {
        let mut z = Vec::new();
        let mut current = 1.0f32;
        while current <= max_zoom + 1e-6 {
            z.push(current);
            current += 0.02;
        }
        z
    };
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for &z in &zooms {
                    let sy = cy + (y as f32 - cy) / z;
                    let sx = cx + (x as f32 - cx) / z;
                    acc += img.sample_bilinear(ci, sy, sx);
                }
                out[(ci, y, x)] = (acc / zooms.len() as f32).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::from_valid(out)
}

fn snow(img: &ImageTensor, density: f64, dim: f32, rng: &mut impl Rng) -> ImageTensor {
    let (c, h, w) = img.dim();
    // sparse bright points smeared into short streaks
    let mut layer = Array2::<f32>::zeros((h, w));
    let angle = rng.gen::<f32>() * std::f32::consts::PI;
    let (sin_a, cos_a) = angle.sin_cos();
    for y in 0..h {
        for x in 0..w {
            if rng.gen::<f64>() < density {
                for t in -2i64..=2 {
                    let sy = y as i64 + (t as f32 * sin_a).round() as i64;
                    let sx = x as i64 + (t as f32 * cos_a).round() as i64;
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                        layer[(sy as usize, sx as usize)] = 1.0;
                    }
                }
            }
        }
    }
    let mut out = img.pixels().clone();
    for ci in 0..c {
        let mut ch = out.index_axis_mut(Axis(0), ci);
        ndarray::Zip::from(&mut ch).and(&layer).for_each(|v, &sv| {
            *v = (*v * dim + sv * 0.8).clamp(0.0, 1.0);
        });
    }
    ImageTensor::from_valid(out)
}

fn blend_field(img: &ImageTensor, field: &Array2<f32>, keep: f32, add: f32) -> ImageTensor {
    let mut out = img.pixels().clone();
    for mut ch in out.axis_iter_mut(Axis(0)) {
        ndarray::Zip::from(&mut ch).and(field).for_each(|v, &fv| {
            *v = (*v * keep + add * fv).clamp(0.0, 1.0);
        });
    }
    ImageTensor::from_valid(out)
}

fn elastic_warp(img: &ImageTensor, alpha: f32, rng: &mut impl Rng) -> ImageTensor {
    let (c, h, w) = img.dim();
    let grid = 4usize;
    let mut dy_grid = Array2::<f32>::zeros((grid, grid));
    let mut dx_grid = Array2::<f32>::zeros((grid, grid));
    for v in dy_grid.iter_mut() {
        *v = rng.gen_range(-1.0f32..=1.0) * alpha;
    }
    for v in dx_grid.iter_mut() {
        *v = rng.gen_range(-1.0f32..=1.0) * alpha;
    }
    let dy_field = upsample_field(&dy_grid, h, w);
    let dx_field = upsample_field(&dx_grid, h, w);
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let sy = y as f32 + dy_field[(y, x)];
                let sx = x as f32 + dx_field[(y, x)];
                out[(ci, y, x)] = img.sample_bilinear(ci, sy, sx).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::from_valid(out)
}

fn pixelate(img: &ImageTensor, keep: f32) -> ImageTensor {
    let (c, h, w) = img.dim();
    let bh = ((h as f32 * keep).round() as usize).max(1);
    let bw = ((w as f32 * keep).round() as usize).max(1);
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        let ch = img.pixels().index_axis(Axis(0), ci);
        // block-average then nearest-neighbor upsample
        for by in 0..bh {
            let y0 = by * h / bh;
            let y1 = ((by + 1) * h).div_ceil(bh).min(h).max(y0 + 1);
            for bx in 0..bw {
                let x0 = bx * w / bw;
                let x1 = ((bx + 1) * w).div_ceil(bw).min(w).max(x0 + 1);
                let mut acc = 0.0f32;
                let mut count = 0.0f32;
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc += ch[(y, x)];
                        count += 1.0;
                    }
                }
                let mean = acc / count;
                for y in y0..y1 {
                    for x in x0..x1 {
                        out[(ci, y, x)] = mean.clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    ImageTensor::from_valid(out)
}

fn jpeg_roundtrip(img: &ImageTensor, quality: u8) -> Result<ImageTensor, AugmentError> {
    let (c, h, w) = img.dim();
    let mut bytes: Vec<u8> = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ci in 0..c {
                bytes.push((img.pixels()[(ci, y, x)] * 255.0).round() as u8);
            }
        }
    }
    let color = if c == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    let mut encoded = Vec::new();
    let mut encoder =
        image::codecs::jpeg::JpegEncoder::new_with_quality(&mut encoded, quality);
    encoder
        .encode(&bytes, w as u32, h as u32, color)
        .map_err(|e| AugmentError::Codec(e.to_string()))?;
    let decoded = image::load_from_memory_with_format(&encoded, image::ImageFormat::Jpeg)
        .map_err(|e| AugmentError::Codec(e.to_string()))?;
    let mut out = Array3::zeros((c, h, w));
    if c == 1 {
        let gray = decoded.to_luma8();
        for y in 0..h {
            for x in 0..w {
                out[(0, y, x)] = gray.get_pixel(x as u32, y as u32).0[0] as f32 / 255.0;
            }
        }
    } else {
        let rgb = decoded.to_rgb8();
        for y in 0..h {
            for x in 0..w {
                let p = rgb.get_pixel(x as u32, y as u32).0;
                for ci in 0..3 {
                    out[(ci, y, x)] = p[ci] as f32 / 255.0;
                }
            }
        }
    }
    Ok(ImageTensor::from_valid(out))
}

/// Two-octave bilinear value noise in `[0, 1]`, used for weather textures and
/// procedural backgrounds.
pub(crate) fn value_noise(h: usize, w: usize, cell: usize, rng: &mut impl Rng) -> Array2<f32> {
    let octave = |cell: usize, rng: &mut dyn FnMut() -> f32| -> Array2<f32> {
        let gh = h.div_ceil(cell) + 2;
        let gw = w.div_ceil(cell) + 2;
        let grid = Array2::from_shape_fn((gh, gw), |_| rng());
        Array2::from_shape_fn((h, w), |(y, x)| {
            let fy = y as f32 / cell as f32;
            let fx = x as f32 / cell as f32;
            let y0 = fy.floor() as usize;
            let x0 = fx.floor() as usize;
            let ty = fy - y0 as f32;
            let tx = fx - x0 as f32;
            let top = grid[(y0, x0)] * (1.0 - tx) + grid[(y0, x0 + 1)] * tx;
            let bot = grid[(y0 + 1, x0)] * (1.0 - tx) + grid[(y0 + 1, x0 + 1)] * tx;
            top * (1.0 - ty) + bot * ty
        })
    };
    let mut draw = || rng.gen::<f32>();
    let coarse = octave(cell.max(2), &mut draw);
    let fine = octave((cell / 2).max(1), &mut draw);
    let mut out = coarse;
    ndarray::Zip::from(&mut out).and(&fine).for_each(|c, &f| {
        *c = (0.7 * *c + 0.3 * f).clamp(0.0, 1.0);
    });
    out
}

fn upsample_field(grid: &Array2<f32>, h: usize, w: usize) -> Array2<f32> {
    let (gh, gw) = grid.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let fy = y as f32 / (h.max(2) - 1) as f32 * (gh - 1) as f32;
        let fx = x as f32 / (w.max(2) - 1) as f32 * (gw - 1) as f32;
        let y0 = (fy.floor() as usize).min(gh - 2);
        let x0 = (fx.floor() as usize).min(gw - 2);
        let ty = fy - y0 as f32;
        let tx = fx - x0 as f32;
        let top = grid[(y0, x0)] * (1.0 - tx) + grid[(y0, x0 + 1)] * tx;
        let bot = grid[(y0 + 1, x0)] * (1.0 - tx) + grid[(y0 + 1, x0 + 1)] * tx;
        top * (1.0 - ty) + bot * ty
    })
}
