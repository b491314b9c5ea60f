//! Procedurally rendered digit dataset.
//!
//! Ten stroke-template classes rendered at 28x28 with per-sample affine
//! jitter, stroke thickness, intensity and noise variation. The generator is
//! seed-deterministic and needs no external files, which makes the full
//! pipeline runnable (and testable) in a sealed environment; real datasets
//! are ingested through `pipeline::ingest` instead.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use crate::data::{ImageTensor, LabeledDataset};
use crate::rng;

type Point = (f32, f32);
type Segment = (Point, Point);

fn arc(cx: f32, cy: f32, r: f32, deg0: f32, deg1: f32, steps: usize) -> Vec<Segment> {
    let mut out = Vec::with_capacity(steps);
    let mut last: Option<Point> = None;
    for s in 0..=steps {
        let t = deg0 + (deg1 - deg0) * (s as f32 / steps as f32);
        let rad = t.to_radians();
        let p = (cx + r * rad.cos(), cy + r * rad.sin());
        if let Some(prev) = last {
            out.push((prev, p));
        }
        last = Some(p);
    }
    out
}

fn circle(cx: f32, cy: f32, r: f32) -> Vec<Segment> {
    arc(cx, cy, r, 0.0, 360.0, 14)
}

fn seg(x1: f32, y1: f32, x2: f32, y2: f32) -> Segment {
    ((x1, y1), (x2, y2))
}

/// Stroke templates in unit coordinates (y down), one per class.
fn template(class: usize) -> Vec<Segment> {
    match class {
        0 => arc(0.5, 0.5, 1.0, 0.0, 360.0, 16)
            .into_iter()
            .map(|((x1, y1), (x2, y2))| {
                // squash into an upright ellipse
                (
                    (0.5 + (x1 - 0.5) * 0.23, 0.5 + (y1 - 0.5) * 0.34),
                    (0.5 + (x2 - 0.5) * 0.23, 0.5 + (y2 - 0.5) * 0.34),
                )
            })
            .collect(),
        1 => vec![
            seg(0.38, 0.30, 0.52, 0.16),
            seg(0.52, 0.16, 0.52, 0.84),
            seg(0.38, 0.84, 0.66, 0.84),
        ],
        2 => {
            let mut v = arc(0.5, 0.34, 0.20, 180.0, 360.0, 8);
            v.push(seg(0.70, 0.34, 0.28, 0.84));
            v.push(seg(0.28, 0.84, 0.74, 0.84));
            v
        }
        3 => {
            let mut v = arc(0.47, 0.33, 0.18, -120.0, 90.0, 8);
            v.extend(arc(0.47, 0.65, 0.20, -90.0, 120.0, 8));
            v
        }
        4 => vec![
            seg(0.62, 0.14, 0.26, 0.58),
            seg(0.26, 0.58, 0.80, 0.58),
            seg(0.62, 0.14, 0.62, 0.86),
        ],
        5 => {
            let mut v = vec![
                seg(0.72, 0.16, 0.32, 0.16),
                seg(0.32, 0.16, 0.30, 0.45),
                seg(0.30, 0.45, 0.44, 0.43),
            ];
            v.extend(arc(0.47, 0.63, 0.21, -110.0, 110.0, 8));
            v
        }
        6 => {
            let mut v = vec![seg(0.62, 0.14, 0.40, 0.42)];
            v.extend(circle(0.48, 0.64, 0.19));
            v
        }
        7 => vec![
            seg(0.26, 0.16, 0.74, 0.16),
            seg(0.74, 0.16, 0.44, 0.86),
            seg(0.36, 0.50, 0.62, 0.50),
        ],
        8 => {
            let mut v = circle(0.50, 0.32, 0.15);
            v.extend(circle(0.50, 0.67, 0.19));
            v
        }
        9 => {
            let mut v = circle(0.52, 0.34, 0.17);
            v.push(seg(0.69, 0.36, 0.58, 0.86));
            v
        }
        _ => unreachable!("digit classes are 0..10"),
    }
}

fn dist_to_segment(px: f32, py: f32, s: &Segment) -> f32 {
    let ((x1, y1), (x2, y2)) = *s;
    let dx = x2 - x1;
    let dy = y2 - y1;
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq > 0.0 {
        (((px - x1) * dx + (py - y1) * dy) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let cx = x1 + t * dx;
    let cy = y1 + t * dy;
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Render one digit with seeded jitter. 28x28, single channel.
///
/// Besides the class template, every instance carries its own "handwriting":
/// a smooth warp field, a couple of decoration strokes, stroke thickness and
/// a linear shading ramp. The per-instance signal is what makes instance
/// discrimination meaningful on this data.
pub fn render_digit(class: usize, seed: u64) -> ImageTensor {
    const SIZE: usize = 28;
    let mut r = rng::derived_stream(seed, "digit-render", &[class as u64]);
    let angle = r.gen_range(-14.0f32..=14.0).to_radians();
    let scale = r.gen_range(0.82f32..=1.15);
    let shear = r.gen_range(-0.16f32..=0.16);
    let tx = r.gen_range(-0.06f32..=0.06);
    let ty = r.gen_range(-0.06f32..=0.06);
    let half_thick = r.gen_range(0.70f32..=1.45);
    let intensity = r.gen_range(0.72f32..=1.00);
    let noise_sigma = 0.02f32;

    let (sin_a, cos_a) = angle.sin_cos();
    let warp = |(x, y): Point| -> Point {
        let (cx, cy) = (x - 0.5, y - 0.5);
        let (rx, ry) = (cx * cos_a - cy * sin_a, cx * sin_a + cy * cos_a);
        let sx = (rx + shear * ry) * scale;
        let sy = ry * scale;
        (
            (sx + 0.5 + tx) * SIZE as f32,
            (sy + 0.5 + ty) * SIZE as f32,
        )
    };
    // smooth warp field: keeps strokes connected (shared endpoints move
    // together) while giving every instance its own curvature
    let amp_x = r.gen_range(0.015f32..=0.05);
    let amp_y = r.gen_range(0.015f32..=0.05);
    let freq_x = r.gen_range(3.0f32..=9.0);
    let freq_y = r.gen_range(3.0f32..=9.0);
    let phase_x = r.gen_range(0.0f32..=std::f32::consts::TAU);
    let phase_y = r.gen_range(0.0f32..=std::f32::consts::TAU);
    let wobble = |(x, y): Point| -> Point {
        (
            x + amp_x * (freq_x * y + phase_x).sin(),
            y + amp_y * (freq_y * x + phase_y).sin(),
        )
    };
    let base = template(class);
    let mut decorated = base.clone();
    // short decoration strokes hanging off the glyph
    for _ in 0..2 {
        let host = base[r.gen_range(0..base.len())];
        let from = if r.gen::<bool>() { host.0 } else { host.1 };
        let len = r.gen_range(0.05f32..=0.13);
        let dir = r.gen_range(0.0f32..=std::f32::consts::TAU);
        decorated.push((from, (from.0 + len * dir.cos(), from.1 + len * dir.sin())));
    }
    let segments: Vec<Segment> = decorated
        .into_iter()
        .map(|(a, b)| (warp(wobble(a)), warp(wobble(b))))
        .collect();

    // per-instance shading ramp across the canvas
    let shade_dir = r.gen_range(0.0f32..=std::f32::consts::TAU);
    let shade_amp = r.gen_range(0.0f32..=0.35);
    let (shade_dx, shade_dy) = shade_dir.sin_cos();

    let edge = 0.6f32;
    let mut pixels = Array2::<f32>::zeros((SIZE, SIZE));
    for y in 0..SIZE {
        for x in 0..SIZE {
            let px = x as f32 + 0.5;
            let py = y as f32 + 0.5;
            let d = segments
                .iter()
                .map(|s| dist_to_segment(px, py, s))
                .fold(f32::INFINITY, f32::min);
            let coverage = ((half_thick + edge - d) / (2.0 * edge)).clamp(0.0, 1.0);
            let ramp = 1.0
                + shade_amp
                    * ((px / SIZE as f32 - 0.5) * shade_dx + (py / SIZE as f32 - 0.5) * shade_dy);
            pixels[(y, x)] = (intensity * coverage * ramp).clamp(0.0, 1.0);
        }
    }
    for v in pixels.iter_mut() {
        // box-muller from two uniforms keeps the draw count fixed per pixel
        let u1: f32 = r.gen_range(1e-7..1.0);
        let u2: f32 = r.gen();
        let n = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos();
        *v = (*v + noise_sigma * n).clamp(0.0, 1.0);
    }
    ImageTensor::from_valid(pixels.insert_axis(ndarray::Axis(0)))
        .quantize_u8()
}

/// A balanced, seed-deterministic digit dataset (`count` images, classes
/// cycling 0..10).
pub fn synth_digits(count: usize, seed: u64, id: &str) -> LabeledDataset {
    let images: Vec<ImageTensor> = (0..count)
        .into_par_iter()
        .map(|i| render_digit(i % 10, rng::derive_seed(seed, "digit", &[i as u64])))
        .collect();
    let labels: Vec<usize> = (0..count).map(|i| i % 10).collect();
    LabeledDataset::new(id, images, labels).expect("balanced synthetic digits are well-formed")
}
