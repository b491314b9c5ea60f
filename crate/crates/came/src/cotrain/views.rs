//! Contrastive view generation: random resized crop, color jitter,
//! horizontal flip and random grayscale, in the usual contrastive-learning
//! configuration.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ImageTensor;
use crate::rng;

/// Color jitter strengths. A factor of 0 disables the corresponding jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

/// The contrastive view-generation policy.
///
/// `crop_scale = (a, b)` is the area-fraction range of the random resized
/// crop; its augmentation strength is `r = (1 - b) + (1 - a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugPolicy {
    pub crop_scale: (f64, f64),
    pub jitter: ColorJitter,
    pub jitter_prob: f64,
    pub flip_prob: f64,
    pub grayscale_prob: f64,
}

impl AugPolicy {
    /// The standard contrastive defaults: crop scale [0.08, 1.0]
    /// (strength 0.92), jitter (0.8, 0.8, 0.8, 0.2) at probability 0.8,
    /// flip 0.5, grayscale 0.2.
    pub fn simclr_default() -> Self {
        Self {
            crop_scale: (0.08, 1.0),
            jitter: ColorJitter {
                brightness: 0.8,
                contrast: 0.8,
                saturation: 0.8,
                hue: 0.2,
            },
            jitter_prob: 0.8,
            flip_prob: 0.5,
            grayscale_prob: 0.2,
        }
    }

    /// Digit-friendly variant: no horizontal flips (digits are not mirror
    /// invariant) and gentler crops and jitter, since an 8%-area crop of a
    /// small glyph rarely keeps its identity.
    pub fn digits_default() -> Self {
        Self {
            crop_scale: (0.5, 1.0),
            jitter: ColorJitter {
                brightness: 0.5,
                contrast: 0.5,
                saturation: 0.5,
                hue: 0.1,
            },
            flip_prob: 0.0,
            ..Self::simclr_default()
        }
    }

    /// A policy that reproduces its input exactly.
    pub fn identity() -> Self {
        Self {
            crop_scale: (1.0, 1.0),
            jitter: ColorJitter {
                brightness: 0.0,
                contrast: 0.0,
                saturation: 0.0,
                hue: 0.0,
            },
            jitter_prob: 0.0,
            flip_prob: 0.0,
            grayscale_prob: 0.0,
        }
    }

    /// Crop augmentation strength `r = (1 - b) + (1 - a)`.
    pub fn aug_strength(&self) -> f64 {
        (1.0 - self.crop_scale.1) + (1.0 - self.crop_scale.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        let (a, b) = self.crop_scale;
        if !(0.0 < a && a <= b && b <= 1.0) {
            return Err(format!("crop_scale ({a}, {b}) must satisfy 0 < a <= b <= 1"));
        }
        let j = &self.jitter;
        if j.brightness < 0.0 || j.contrast < 0.0 || j.saturation < 0.0 || !(0.0..=0.5).contains(&j.hue) {
            return Err("jitter strengths must be >= 0 (hue in [0, 0.5])".to_string());
        }
        for (name, p) in [
            ("jitter_prob", self.jitter_prob),
            ("flip_prob", self.flip_prob),
            ("grayscale_prob", self.grayscale_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Generate one augmented view of an image under the policy.
pub fn make_view(img: &ImageTensor, policy: &AugPolicy, r: &mut impl Rng) -> ImageTensor {
    let mut out = random_resized_crop(img, policy.crop_scale, r);
    if policy.jitter_prob > 0.0 && r.gen::<f64>() < policy.jitter_prob {
        out = color_jitter(&out, &policy.jitter, r);
    }
    if policy.grayscale_prob > 0.0 && r.gen::<f64>() < policy.grayscale_prob {
        out = to_grayscale_keep_channels(&out);
    }
    if policy.flip_prob > 0.0 && r.gen::<f64>() < policy.flip_prob {
        out = hflip(&out);
    }
    out
}

/// Two aligned augmented views per input; pair `i` across the two returned
/// vectors is the positive pair for sample `i`. Deterministic per seed.
pub fn make_views(
    batch: &[ImageTensor],
    policy: &AugPolicy,
    seed: u64,
) -> (Vec<ImageTensor>, Vec<ImageTensor>) {
    let view = |v: u64| -> Vec<ImageTensor> {
        batch
            .iter()
            .enumerate()
            .map(|(i, img)| {
                let mut r = rng::derived_stream(seed, "view", &[i as u64, v]);
                make_view(img, policy, &mut r)
            })
            .collect()
    };
    (view(0), view(1))
}

fn random_resized_crop(img: &ImageTensor, scale: (f64, f64), r: &mut impl Rng) -> ImageTensor {
    let (c, h, w) = img.dim();
    if scale == (1.0, 1.0) {
        return img.clone();
    }
    let area = (h * w) as f64;
    let mut crop = None;
    for _ in 0..10 {
        let target = area * r.gen_range(scale.0..=scale.1);
        let aspect = (r.gen_range((3.0f64 / 4.0).ln()..=(4.0f64 / 3.0).ln())).exp();
        let cw = (target * aspect).sqrt().round() as usize;
        let ch = (target / aspect).sqrt().round() as usize;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let oy = if ch == h { 0 } else { r.gen_range(0..=(h - ch)) };
            let ox = if cw == w { 0 } else { r.gen_range(0..=(w - cw)) };
            crop = Some((oy, ox, ch, cw));
            break;
        }
    }
    let (oy, ox, ch, cw) = crop.unwrap_or((0, 0, h, w));
    if (oy, ox, ch, cw) == (0, 0, h, w) {
        return img.clone();
    }
    // resize the crop back to (h, w), sampling inside the crop rectangle
    let mut out = Array3::zeros((c, h, w));
    let sy_scale = ch as f32 / h as f32;
    let sx_scale = cw as f32 / w as f32;
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let sy = (y as f32 + 0.5) * sy_scale - 0.5;
                let sx = (x as f32 + 0.5) * sx_scale - 0.5;
                let sy = sy.clamp(0.0, ch as f32 - 1.0) + oy as f32;
                let sx = sx.clamp(0.0, cw as f32 - 1.0) + ox as f32;
                out[(ci, y, x)] = img.sample_bilinear(ci, sy, sx).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::from_valid(out)
}

fn color_jitter(img: &ImageTensor, jitter: &ColorJitter, r: &mut impl Rng) -> ImageTensor {
    // the four jitter components run in a random order
    let mut order = [0usize, 1, 2, 3];
    for i in (1..4).rev() {
        let j = r.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut out = img.clone();
    for &op in &order {
        out = match op {
            0 if jitter.brightness > 0.0 => {
                let lo = (1.0 - jitter.brightness).max(0.0);
                let f = r.gen_range(lo..=1.0 + jitter.brightness);
                scale_pixels(&out, f as f32)
            }
            1 if jitter.contrast > 0.0 => {
                let lo = (1.0 - jitter.contrast).max(0.0);
                let f = r.gen_range(lo..=1.0 + jitter.contrast);
                adjust_contrast(&out, f as f32)
            }
            2 if jitter.saturation > 0.0 => {
                let lo = (1.0 - jitter.saturation).max(0.0);
                let f = r.gen_range(lo..=1.0 + jitter.saturation);
                crate::augment::color_enhance(&out, f)
            }
            3 if jitter.hue > 0.0 => {
                let delta = r.gen_range(-jitter.hue..=jitter.hue);
                shift_hue(&out, delta as f32)
            }
            _ => out,
        };
    }
    out
}

fn scale_pixels(img: &ImageTensor, f: f32) -> ImageTensor {
    ImageTensor::from_valid(img.pixels().mapv(|v| (v * f).clamp(0.0, 1.0)))
}

fn adjust_contrast(img: &ImageTensor, f: f32) -> ImageTensor {
    let mean = img.luminance().mean().unwrap_or(0.5);
    ImageTensor::from_valid(
        img.pixels()
            .mapv(|v| ((v - mean) * f + mean).clamp(0.0, 1.0)),
    )
}

fn to_grayscale_keep_channels(img: &ImageTensor) -> ImageTensor {
    if img.channels() == 1 {
        return img.clone();
    }
    let gray = img.luminance();
    let (c, h, w) = img.dim();
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(ci, y, x)] = gray[(y, x)].clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::from_valid(out)
}

fn hflip(img: &ImageTensor) -> ImageTensor {
    let (c, h, w) = img.dim();
    let p = img.pixels();
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(ci, y, x)] = p[(ci, y, w - 1 - x)];
            }
        }
    }
    ImageTensor::from_valid(out)
}

/// Shift hue by `delta` in [-0.5, 0.5] of a full revolution.
fn shift_hue(img: &ImageTensor, delta: f32) -> ImageTensor {
    if img.channels() == 1 || delta == 0.0 {
        return img.clone();
    }
    let (_, h, w) = img.dim();
    let p = img.pixels();
    let mut out = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let (hh, s, v) = rgb_to_hsv(p[(0, y, x)], p[(1, y, x)], p[(2, y, x)]);
            let nh = (hh + delta).rem_euclid(1.0);
            let (r, g, b) = hsv_to_rgb(nh, s, v);
            out[(0, y, x)] = r.clamp(0.0, 1.0);
            out[(1, y, x)] = g.clamp(0.0, 1.0);
            out[(2, y, x)] = b.clamp(0.0, 1.0);
        }
    }
    ImageTensor::from_valid(out)
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let v = max;
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    (h, s, v)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    if s == 0.0 {
        return (v, v, v);
    }
    let h6 = h * 6.0;
    let sector = (h6.floor() as i32).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}
