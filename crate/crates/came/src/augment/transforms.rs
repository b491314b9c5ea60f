//! The six label-preserving enhancement and geometry transforms.
//!
//! All functions are pure, shape-stable, clamp their output to `[0, 1]` and
//! reproduce the input exactly at their identity parameter.

use ndarray::{Array2, Array3, Axis};

use crate::data::ImageTensor;

/// Per-channel min/max contrast stretch. Channels with no dynamic range are
/// left untouched.
pub fn auto_contrast(img: &ImageTensor) -> ImageTensor {
    let mut out = img.pixels().clone();
    for mut ch in out.axis_iter_mut(Axis(0)) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in ch.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let span = hi - lo;
        if span > 1e-6 {
            ch.mapv_inplace(|v| ((v - lo) / span).clamp(0.0, 1.0));
        }
    }
    ImageTensor::from_valid(out)
}

/// Rotate around the image center by `degrees`, bilinear sampling with zero
/// fill outside the source.
pub fn rotate(img: &ImageTensor, degrees: f64) -> ImageTensor {
    if degrees == 0.0 {
        return img.clone();
    }
    let (c, h, w) = img.dim();
    let theta = (degrees as f32).to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let cy = (h as f32 - 1.0) / 2.0;
    let cx = (w as f32 - 1.0) / 2.0;
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let dy = y as f32 - cy;
                let dx = x as f32 - cx;
                // inverse mapping: rotate destination back into the source
                let sy = cy + dy * cos_t - dx * sin_t;
                let sx = cx + dy * sin_t + dx * cos_t;
                out[(ci, y, x)] = img.sample_bilinear(ci, sy, sx).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::from_valid(out)
}

/// Shift by a fraction of width/height, bilinear with zero fill.
pub fn translate(img: &ImageTensor, dx_frac: f64, dy_frac: f64) -> ImageTensor {
    if dx_frac == 0.0 && dy_frac == 0.0 {
        return img.clone();
    }
    let (c, h, w) = img.dim();
    let tx = dx_frac as f32 * w as f32;
    let ty = dy_frac as f32 * h as f32;
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(ci, y, x)] = img
                    .sample_bilinear(ci, y as f32 - ty, x as f32 - tx)
                    .clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::from_valid(out)
}

/// Color (saturation) enhancement: blend between the per-pixel grayscale
/// image (factor 0) and the original (factor 1). Single-channel images are
/// their own grayscale, so this is a no-op for them.
pub fn color_enhance(img: &ImageTensor, factor: f64) -> ImageTensor {
    if factor == 1.0 || img.channels() == 1 {
        return img.clone();
    }
    let f = factor as f32;
    let gray = img.luminance();
    let mut out = img.pixels().clone();
    for mut ch in out.axis_iter_mut(Axis(0)) {
        ndarray::Zip::from(&mut ch).and(&gray).for_each(|v, &g| {
            *v = (g + f * (*v - g)).clamp(0.0, 1.0);
        });
    }
    ImageTensor::from_valid(out)
}

/// Brightness enhancement: scale toward black (factor 0) or brighten
/// (factor > 1), clamped.
pub fn brightness(img: &ImageTensor, factor: f64) -> ImageTensor {
    if factor == 1.0 {
        return img.clone();
    }
    let f = factor as f32;
    let out = img.pixels().mapv(|v| (v * f).clamp(0.0, 1.0));
    ImageTensor::from_valid(out)
}

/// Sharpness enhancement: blend between a 3x3-smoothed copy (factor 0) and
/// the original (factor 1); factor > 1 over-sharpens. The one-pixel border is
/// kept from the original, matching the usual enhancement-filter convention.
pub fn sharpness(img: &ImageTensor, factor: f64) -> ImageTensor {
    if factor == 1.0 {
        return img.clone();
    }
    let f = factor as f32;
    let (c, h, w) = img.dim();
    let mut out = img.pixels().clone();
    if h < 3 || w < 3 {
        return ImageTensor::from_valid(out);
    }
    for ci in 0..c {
        let ch = img.pixels().index_axis(Axis(0), ci);
        let smooth = smooth_3x3(&ch.to_owned());
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let s = smooth[(y, x)];
                let v = ch[(y, x)];
                out[(ci, y, x)] = (s + f * (v - s)).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::from_valid(out)
}

// Smoothing kernel [[1,1,1],[1,5,1],[1,1,1]] / 13 over the interior.
fn smooth_3x3(ch: &Array2<f32>) -> Array2<f32> {
    let (h, w) = ch.dim();
    let mut out = ch.clone();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut acc = 0.0f32;
            for dy in 0..3usize {
                for dx in 0..3usize {
                    let weight = if dy == 1 && dx == 1 { 5.0 } else { 1.0 };
                    acc += weight * ch[(y + dy - 1, x + dx - 1)];
                }
            }
            out[(y, x)] = acc / 13.0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn ramp(c: usize, h: usize, w: usize) -> ImageTensor {
        let n = (c * h * w) as f32;
        let arr = Array3::from_shape_fn((c, h, w), |(ci, y, x)| {
            ((ci * h * w + y * w + x) as f32) / n
        });
        ImageTensor::new(arr).unwrap()
    }

    #[test]
    fn rotation_zero_is_identity() {
        let img = ramp(3, 8, 8);
        assert_eq!(rotate(&img, 0.0), img);
    }

    #[test]
    fn brightness_one_is_identity() {
        let img = ramp(3, 8, 8);
        assert_eq!(brightness(&img, 1.0), img);
    }

    #[test]
    fn sharpness_and_color_identity() {
        let img = ramp(3, 8, 8);
        assert_eq!(sharpness(&img, 1.0), img);
        assert_eq!(color_enhance(&img, 1.0), img);
        assert_eq!(translate(&img, 0.0, 0.0), img);
    }

    #[test]
    fn auto_contrast_stretches_to_full_range() {
        let arr = Array3::from_shape_fn((1, 4, 4), |(_, y, x)| 0.25 + 0.5 * ((y * 4 + x) as f32) / 15.0);
        let img = ImageTensor::new(arr).unwrap();
        let out = auto_contrast(&img);
        let lo = out.pixels().iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = out.pixels().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert!((lo - 0.0).abs() < 1e-6);
        assert!((hi - 1.0).abs() < 1e-6);
    }

    #[test]
    fn auto_contrast_flat_channel_untouched() {
        let arr = Array3::from_elem((1, 4, 4), 0.4f32);
        let img = ImageTensor::new(arr).unwrap();
        assert_eq!(auto_contrast(&img), img);
    }

    #[test]
    fn translate_shifts_content() {
        let mut arr = Array3::zeros((1, 5, 5));
        arr[(0, 2, 2)] = 1.0f32;
        let img = ImageTensor::new(arr).unwrap();
        // 20% of 5 px = 1 px right and down
        let out = translate(&img, 0.2, 0.2);
        assert!((out.pixels()[(0, 3, 3)] - 1.0).abs() < 1e-6);
        assert!(out.pixels()[(0, 2, 2)].abs() < 1e-6);
    }

    #[test]
    fn rotation_preserves_shape_and_range() {
        let img = ramp(3, 9, 7);
        let out = rotate(&img, 27.5);
        assert_eq!(out.dim(), img.dim());
        assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
