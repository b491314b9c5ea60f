//! Seedable image transformation primitives and the sample-set synthesis
//! engine that manufactures distribution-shifted test environments from a
//! seed dataset.
//!
//! Everything here is a pure function of its arguments: a [`TransformSpec`]
//! plus an input image always produces bit-identical output, and
//! [`synthesize_sample_sets`] derives an independent random stream per
//! (master seed, set index, image index), so parallel synthesis is
//! order-independent.

mod corruptions;
mod transforms;

pub use corruptions::{apply_corruption, CorruptionType, ALL_CORRUPTIONS};
pub use transforms::{auto_contrast, brightness, color_enhance, rotate, sharpness, translate};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use ndarray::Array3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, ImageTensor, LabeledDataset, SampleSet};
use crate::rng;

/// Rotation range in degrees.
pub const ROTATION_DEGREES: (f64, f64) = (-30.0, 30.0);
/// Enhancement factor range shared by brightness, color and sharpness.
pub const ENHANCE_FACTOR: (f64, f64) = (0.2, 1.8);
/// Translation range as a fraction of width/height.
pub const TRANSLATION_FRACTION: (f64, f64) = (-0.2, 0.2);
/// Digit foreground binarization threshold for background replacement.
pub const FOREGROUND_THRESHOLD: f64 = 0.1;
/// Default number of synthesized sample sets.
pub const DEFAULT_SAMPLE_SET_COUNT: usize = 400;
/// How many leading sets of a `corruption_mixed` synthesis use corruptions.
pub const CORRUPTION_SET_BUDGET: usize = 60;

/// Errors from transform application and synthesis.
#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("unknown transform kind `{0}`")]
    UnknownTransformKind(String),
    #[error("unknown corruption `{0}`")]
    UnknownCorruption(String),
    #[error("parameter `{name}` = {value} outside [{min}, {max}]")]
    ParamOutOfRange {
        name: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("transform `{kind}` missing parameter `{name}`")]
    MissingParam { kind: String, name: String },
    #[error("corruption severity {0} outside 1..=5")]
    BadSeverity(i64),
    #[error("background image {natural_h}x{natural_w} smaller than required patch {patch_h}x{patch_w}")]
    PatchTooSmall {
        natural_h: usize,
        natural_w: usize,
        patch_h: usize,
        patch_w: usize,
    },
    #[error("expected a single-channel image, got {0} channels")]
    NotSingleChannel(usize),
    #[error("expected a 3-channel image, got {0} channels")]
    NotThreeChannel(usize),
    #[error("transform bank is empty")]
    EmptyBank,
    #[error("cannot pick {n_pick} transforms from a bank of {bank}")]
    InvalidPickCount { n_pick: usize, bank: usize },
    #[error("image codec failure: {0}")]
    Codec(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// The transform bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransformKind {
    #[serde(rename = "autoContrast")]
    AutoContrast,
    #[serde(rename = "rotation")]
    Rotation,
    #[serde(rename = "color")]
    Color,
    #[serde(rename = "brightness")]
    Brightness,
    #[serde(rename = "sharpness")]
    Sharpness,
    #[serde(rename = "translation")]
    Translation,
    #[serde(rename = "backgroundReplace")]
    BackgroundReplace,
    #[serde(rename = "corruption")]
    Corruption,
}

/// The six-transform bank drawn from during synthesis.
pub const DEFAULT_BANK: [TransformKind; 6] = [
    TransformKind::AutoContrast,
    TransformKind::Rotation,
    TransformKind::Color,
    TransformKind::Brightness,
    TransformKind::Sharpness,
    TransformKind::Translation,
];

impl TransformKind {
    pub fn name(&self) -> &'static str {
        match self {
            TransformKind::AutoContrast => "autoContrast",
            TransformKind::Rotation => "rotation",
            TransformKind::Color => "color",
            TransformKind::Brightness => "brightness",
            TransformKind::Sharpness => "sharpness",
            TransformKind::Translation => "translation",
            TransformKind::BackgroundReplace => "backgroundReplace",
            TransformKind::Corruption => "corruption",
        }
    }

    pub fn parse(name: &str) -> Result<Self, AugmentError> {
        let all = [
            TransformKind::AutoContrast,
            TransformKind::Rotation,
            TransformKind::Color,
            TransformKind::Brightness,
            TransformKind::Sharpness,
            TransformKind::Translation,
            TransformKind::BackgroundReplace,
            TransformKind::Corruption,
        ];
        all.iter()
            .copied()
            .find(|k| k.name() == name)
            .ok_or_else(|| AugmentError::UnknownTransformKind(name.to_string()))
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A named transform parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Text(String),
}

/// One fully specified transform: kind, parameters, and the seed of its
/// random stream. Equal specs applied to equal inputs give bit-identical
/// outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
    pub seed: u64,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, seed: u64) -> Self {
        Self {
            kind,
            params: BTreeMap::new(),
            seed,
        }
    }

    pub fn with_param(mut self, name: &str, value: ParamValue) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut spec = self.clone();
        spec.seed = seed;
        spec
    }

    fn float_param(&self, name: &str) -> Result<f64, AugmentError> {
        match self.params.get(name) {
            Some(ParamValue::Float(v)) => Ok(*v),
            Some(ParamValue::Int(v)) => Ok(*v as f64),
            _ => Err(AugmentError::MissingParam {
                kind: self.kind.name().to_string(),
                name: name.to_string(),
            }),
        }
    }

    fn float_param_or(&self, name: &str, default: f64) -> Result<f64, AugmentError> {
        if self.params.contains_key(name) {
            self.float_param(name)
        } else {
            Ok(default)
        }
    }

    fn int_param(&self, name: &str) -> Result<i64, AugmentError> {
        match self.params.get(name) {
            Some(ParamValue::Int(v)) => Ok(*v),
            _ => Err(AugmentError::MissingParam {
                kind: self.kind.name().to_string(),
                name: name.to_string(),
            }),
        }
    }

    fn text_param(&self, name: &str) -> Result<&str, AugmentError> {
        match self.params.get(name) {
            Some(ParamValue::Text(v)) => Ok(v),
            _ => Err(AugmentError::MissingParam {
                kind: self.kind.name().to_string(),
                name: name.to_string(),
            }),
        }
    }
}

fn check_range(name: &str, value: f64, range: (f64, f64)) -> Result<f64, AugmentError> {
    if value.is_finite() && value >= range.0 && value <= range.1 {
        Ok(value)
    } else {
        Err(AugmentError::ParamOutOfRange {
            name: name.to_string(),
            value,
            min: range.0,
            max: range.1,
        })
    }
}

/// Where background-replacement patches come from.
#[derive(Debug, Clone)]
pub enum BackgroundSource {
    /// Seeded value-noise textures; needs no external assets.
    Procedural,
    /// A pool of natural RGB images to crop patches from.
    Images(Arc<Vec<ImageTensor>>),
}

/// Context resolved by the synthesis engine rather than recorded in specs.
#[derive(Debug, Clone)]
pub struct TransformCtx {
    pub background: BackgroundSource,
}

impl Default for TransformCtx {
    fn default() -> Self {
        Self {
            background: BackgroundSource::Procedural,
        }
    }
}

/// Apply one transform with the default context (procedural backgrounds).
pub fn apply_transform(image: &ImageTensor, spec: &TransformSpec) -> Result<ImageTensor, AugmentError> {
    apply_transform_with(image, spec, &TransformCtx::default())
}

/// Apply one transform, resolving background patches from `ctx`.
pub fn apply_transform_with(
    image: &ImageTensor,
    spec: &TransformSpec,
    ctx: &TransformCtx,
) -> Result<ImageTensor, AugmentError> {
    match spec.kind {
        TransformKind::AutoContrast => Ok(auto_contrast(image)),
        TransformKind::Rotation => {
            let degrees = check_range("degrees", spec.float_param("degrees")?, ROTATION_DEGREES)?;
            Ok(rotate(image, degrees))
        }
        TransformKind::Color => {
            let factor = check_range("factor", spec.float_param("factor")?, ENHANCE_FACTOR)?;
            Ok(color_enhance(image, factor))
        }
        TransformKind::Brightness => {
            let factor = check_range("factor", spec.float_param("factor")?, ENHANCE_FACTOR)?;
            Ok(brightness(image, factor))
        }
        TransformKind::Sharpness => {
            let factor = check_range("factor", spec.float_param("factor")?, ENHANCE_FACTOR)?;
            Ok(sharpness(image, factor))
        }
        TransformKind::Translation => {
            let dx = check_range("dx", spec.float_param("dx")?, TRANSLATION_FRACTION)?;
            let dy = check_range("dy", spec.float_param("dy")?, TRANSLATION_FRACTION)?;
            Ok(translate(image, dx, dy))
        }
        TransformKind::BackgroundReplace => {
            let threshold =
                check_range("threshold", spec.float_param_or("threshold", FOREGROUND_THRESHOLD)?, (0.0, 1.0))?;
            let gain = check_range("patch_gain", spec.float_param_or("patch_gain", 1.0)?, (0.0, 1.0))?;
            let natural = resolve_background(image, ctx, spec.seed)?;
            replace_background_impl(image, &natural, spec.seed, threshold as f32, gain as f32)
        }
        TransformKind::Corruption => {
            let ctype = CorruptionType::parse(spec.text_param("type")?)?;
            let severity = spec.int_param("severity")?;
            if !(1..=5).contains(&severity) {
                return Err(AugmentError::BadSeverity(severity));
            }
            apply_corruption(image, ctype, severity as u8, spec.seed)
        }
    }
}

fn resolve_background(
    digit: &ImageTensor,
    ctx: &TransformCtx,
    seed: u64,
) -> Result<ImageTensor, AugmentError> {
    match &ctx.background {
        BackgroundSource::Procedural => {
            Ok(procedural_natural(digit.height() * 2, digit.width() * 2, seed))
        }
        BackgroundSource::Images(pool) => {
            if pool.is_empty() {
                return Ok(procedural_natural(digit.height() * 2, digit.width() * 2, seed));
            }
            let mut r = rng::derived_stream(seed, "bg-pick", &[]);
            let idx = r.gen_range(0..pool.len());
            Ok(pool[idx].clone())
        }
    }
}

/// A seeded 3-channel texture that stands in for a natural photograph:
/// a random base color plus two octaves of value noise.
pub fn procedural_natural(height: usize, width: usize, seed: u64) -> ImageTensor {
    let mut r = rng::derived_stream(seed, "bg-texture", &[]);
    let base: [f32; 3] = [r.gen(), r.gen(), r.gen()];
    let noise = corruptions::value_noise(height, width, 6, &mut r);
    let mut out = Array3::zeros((3, height, width));
    for c in 0..3 {
        for y in 0..height {
            for x in 0..width {
                let v = 0.55 * base[c] + 0.45 * noise[(y, x)];
                out[(c, y, x)] = v.clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::from_valid(out)
}

/// Replace the near-zero background of a single-channel digit image with a
/// randomly cropped patch of a natural RGB image. Foreground strokes (pixels
/// above the binarization threshold) are kept, replicated across channels.
pub fn replace_background(
    digit: &ImageTensor,
    natural: &ImageTensor,
    seed: u64,
) -> Result<ImageTensor, AugmentError> {
    replace_background_impl(digit, natural, seed, FOREGROUND_THRESHOLD as f32, 1.0)
}

fn replace_background_impl(
    digit: &ImageTensor,
    natural: &ImageTensor,
    seed: u64,
    threshold: f32,
    patch_gain: f32,
) -> Result<ImageTensor, AugmentError> {
    if digit.channels() != 1 {
        return Err(AugmentError::NotSingleChannel(digit.channels()));
    }
    if natural.channels() != 3 {
        return Err(AugmentError::NotThreeChannel(natural.channels()));
    }
    let (_, dh, dw) = digit.dim();
    let (_, nh, nw) = natural.dim();
    if nh < dh || nw < dw {
        return Err(AugmentError::PatchTooSmall {
            natural_h: nh,
            natural_w: nw,
            patch_h: dh,
            patch_w: dw,
        });
    }
    let mut r = rng::derived_stream(seed, "bg-crop", &[]);
    let oy = if nh == dh { 0 } else { r.gen_range(0..=(nh - dh)) };
    let ox = if nw == dw { 0 } else { r.gen_range(0..=(nw - dw)) };
    let mut out = Array3::zeros((3, dh, dw));
    let d = digit.pixels();
    let n = natural.pixels();
    for y in 0..dh {
        for x in 0..dw {
            let v = d[(0, y, x)];
            if v > threshold {
                for c in 0..3 {
                    out[(c, y, x)] = v;
                }
            } else {
                for c in 0..3 {
                    out[(c, y, x)] = (n[(c, oy + y, ox + x)] * patch_gain).clamp(0.0, 1.0);
                }
            }
        }
    }
    Ok(ImageTensor::from_valid(out))
}

/// Draw `n_pick` distinct kinds from `bank` without replacement and give each
/// parameters sampled from its documented range. Specs are returned in drawn
/// order, which is also the application order recorded in provenance.
pub fn compose_pipeline(
    seed_rng: u64,
    n_pick: usize,
    bank: &[TransformKind],
) -> Result<Vec<TransformSpec>, AugmentError> {
    if bank.is_empty() {
        return Err(AugmentError::EmptyBank);
    }
    if n_pick < 1 || n_pick > bank.len() {
        return Err(AugmentError::InvalidPickCount {
            n_pick,
            bank: bank.len(),
        });
    }
    let mut r = rng::derived_stream(seed_rng, "compose", &[]);
    // partial Fisher-Yates: first n_pick entries are the draw, in drawn order
    let mut indices: Vec<usize> = (0..bank.len()).collect();
    for i in 0..n_pick {
        let j = r.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    indices.truncate(n_pick);
    let specs = indices
        .into_iter()
        .map(|idx| draw_spec(bank[idx], &mut r))
        .collect();
    Ok(specs)
}

// Spec seeds live in TOML manifests, whose integers are i64; keep them to
// 63 bits.
fn draw_seed(r: &mut impl Rng) -> u64 {
    r.gen::<u64>() >> 1
}

fn draw_spec(kind: TransformKind, r: &mut impl Rng) -> TransformSpec {
    let seed = draw_seed(r);
    let mut spec = TransformSpec::new(kind, seed);
    match kind {
        TransformKind::AutoContrast => {}
        TransformKind::Rotation => {
            spec = spec.with_param(
                "degrees",
                ParamValue::Float(r.gen_range(ROTATION_DEGREES.0..=ROTATION_DEGREES.1)),
            );
        }
        TransformKind::Color | TransformKind::Brightness | TransformKind::Sharpness => {
            spec = spec.with_param(
                "factor",
                ParamValue::Float(r.gen_range(ENHANCE_FACTOR.0..=ENHANCE_FACTOR.1)),
            );
        }
        TransformKind::Translation => {
            spec = spec
                .with_param(
                    "dx",
                    ParamValue::Float(r.gen_range(TRANSLATION_FRACTION.0..=TRANSLATION_FRACTION.1)),
                )
                .with_param(
                    "dy",
                    ParamValue::Float(r.gen_range(TRANSLATION_FRACTION.0..=TRANSLATION_FRACTION.1)),
                );
        }
        TransformKind::BackgroundReplace => {
            spec = spec
                .with_param("threshold", ParamValue::Float(FOREGROUND_THRESHOLD))
                .with_param("patch_gain", ParamValue::Float(r.gen_range(0.10..=1.0)));
        }
        TransformKind::Corruption => {
            let ctype = ALL_CORRUPTIONS[r.gen_range(0..ALL_CORRUPTIONS.len())];
            spec = spec
                .with_param("type", ParamValue::Text(ctype.name().to_string()))
                .with_param("severity", ParamValue::Int(r.gen_range(1..=5)));
        }
    }
    spec
}

/// Synthesis recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    /// Background replacement on single-channel digits, then 3-of-6.
    Mnist,
    /// 3-of-6 from the default bank.
    Cifar,
    /// Corruptions (15 types x severities, cycling) for the first
    /// [`CORRUPTION_SET_BUDGET`] sets, then 3-of-6 for the rest.
    CorruptionMixed,
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Recipe::Mnist => "mnist",
            Recipe::Cifar => "cifar",
            Recipe::CorruptionMixed => "corruption_mixed",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Recipe {
    type Err = AugmentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mnist" => Ok(Recipe::Mnist),
            "cifar" => Ok(Recipe::Cifar),
            "corruption_mixed" => Ok(Recipe::CorruptionMixed),
            other => Err(AugmentError::UnknownTransformKind(other.to_string())),
        }
    }
}

/// The transform list for sample set `index` of `count` under a recipe.
pub fn recipe_specs(
    recipe: Recipe,
    index: usize,
    count: usize,
    master_seed: u64,
) -> Result<Vec<TransformSpec>, AugmentError> {
    let set_seed = rng::derive_seed(master_seed, "sample-set", &[index as u64]);
    let mut r = rng::stream(set_seed);
    match recipe {
        Recipe::Mnist => {
            let bg = draw_spec(TransformKind::BackgroundReplace, &mut r);
            let mut specs = vec![bg];
            specs.extend(compose_pipeline(r.gen::<u64>(), 3, &DEFAULT_BANK)?);
            Ok(specs)
        }
        Recipe::Cifar => compose_pipeline(r.gen::<u64>(), 3, &DEFAULT_BANK),
        Recipe::CorruptionMixed => {
            let budget = CORRUPTION_SET_BUDGET.min(count);
            if index < budget {
                let ctype = ALL_CORRUPTIONS[index % ALL_CORRUPTIONS.len()];
                let severity = (index / ALL_CORRUPTIONS.len()) % 5 + 1;
                Ok(vec![TransformSpec::new(TransformKind::Corruption, draw_seed(&mut r))
                    .with_param("type", ParamValue::Text(ctype.name().to_string()))
                    .with_param("severity", ParamValue::Int(severity as i64))])
            } else {
                compose_pipeline(r.gen::<u64>(), 3, &DEFAULT_BANK)
            }
        }
    }
}

/// Synthesize one sample set. Images are quantized onto the 8-bit grid so the
/// in-memory tensors equal their lossless on-disk form exactly.
pub fn synthesize_sample_set(
    seed_set: &LabeledDataset,
    recipe: Recipe,
    index: usize,
    count: usize,
    master_seed: u64,
    ctx: &TransformCtx,
) -> Result<SampleSet, AugmentError> {
    let specs = recipe_specs(recipe, index, count, master_seed)?;
    let mut images = Vec::with_capacity(seed_set.len());
    for (j, img) in seed_set.images().iter().enumerate() {
        let mut current = img.clone();
        for spec in &specs {
            let per_image = spec.with_seed(rng::derive_seed(spec.seed, "image", &[j as u64]));
            current = apply_transform_with(&current, &per_image, ctx)?;
        }
        images.push(current.quantize_u8());
    }
    Ok(SampleSet {
        id: format!("sset-{index:04}"),
        seed_set_id: seed_set.id.clone(),
        images,
        labels: seed_set.labels().to_vec(),
        provenance: specs,
    })
}

/// Synthesize `count` sample sets with procedural backgrounds.
pub fn synthesize_sample_sets(
    seed_set: &LabeledDataset,
    count: usize,
    recipe: Recipe,
    master_seed: u64,
) -> Result<Vec<SampleSet>, AugmentError> {
    synthesize_sample_sets_with(seed_set, count, recipe, master_seed, &TransformCtx::default())
}

/// Synthesize `count` sample sets in parallel; results are ordered by index
/// and bit-identical to a serial run.
pub fn synthesize_sample_sets_with(
    seed_set: &LabeledDataset,
    count: usize,
    recipe: Recipe,
    master_seed: u64,
    ctx: &TransformCtx,
) -> Result<Vec<SampleSet>, AugmentError> {
    (0..count)
        .into_par_iter()
        .map(|i| synthesize_sample_set(seed_set, recipe, i, count, master_seed, ctx))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn digit_like(h: usize, w: usize) -> ImageTensor {
        let arr = Array3::from_shape_fn((1, h, w), |(_, y, x)| {
            if (y as i64 - h as i64 / 2).abs() < 2 || (x as i64 - w as i64 / 2).abs() < 2 {
                0.9
            } else {
                0.0
            }
        });
        ImageTensor::new(arr).unwrap()
    }

    fn tiny_seed_set(n: usize) -> LabeledDataset {
        let images = (0..n).map(|_| digit_like(12, 12)).collect();
        let labels = (0..n).map(|i| i % 2).collect();
        LabeledDataset::new("seed", images, labels).unwrap()
    }

    #[test]
    fn corruption_spec_applies_twice_identically() {
        let img = digit_like(16, 16).to_rgb();
        let spec = TransformSpec::new(TransformKind::Corruption, 7)
            .with_param("type", ParamValue::Text("gaussian_noise".into()))
            .with_param("severity", ParamValue::Int(3));
        let a = apply_transform(&img, &spec).unwrap();
        let b = apply_transform(&img, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rotation_param_out_of_range_rejected() {
        let img = digit_like(8, 8);
        let spec = TransformSpec::new(TransformKind::Rotation, 0)
            .with_param("degrees", ParamValue::Float(45.0));
        assert!(matches!(
            apply_transform(&img, &spec),
            Err(AugmentError::ParamOutOfRange { .. })
        ));
    }

    #[test]
    fn background_replace_empty_foreground_gives_patch() {
        let digit = ImageTensor::zeros(1, 8, 8).unwrap();
        let natural = procedural_natural(16, 16, 3);
        let out = replace_background(&digit, &natural, 5).unwrap();
        // output must be a contiguous 8x8 crop of the natural image
        let n = natural.pixels();
        let o = out.pixels();
        let mut found = false;
        'search: for oy in 0..=8 {
            for ox in 0..=8 {
                let matches = (0..8).all(|y| {
                    (0..8).all(|x| (0..3).all(|c| o[(c, y, x)] == n[(c, oy + y, ox + x)]))
                });
                if matches {
                    found = true;
                    break 'search;
                }
            }
        }
        assert!(found, "output is not a crop of the natural image");
    }

    #[test]
    fn background_replace_full_foreground_keeps_digit() {
        let digit = ImageTensor::new(Array3::from_elem((1, 8, 8), 1.0f32)).unwrap();
        let natural = procedural_natural(16, 16, 3);
        let out = replace_background(&digit, &natural, 5).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 1.0));
        assert_eq!(out.channels(), 3);
    }

    #[test]
    fn background_replace_deterministic() {
        let digit = digit_like(10, 10);
        let natural = procedural_natural(24, 24, 11);
        let a = replace_background(&digit, &natural, 42).unwrap();
        let b = replace_background(&digit, &natural, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn background_replace_rejects_small_patch() {
        let digit = digit_like(10, 10);
        let natural = procedural_natural(6, 6, 1);
        assert!(matches!(
            replace_background(&digit, &natural, 0),
            Err(AugmentError::PatchTooSmall { .. })
        ));
    }

    #[test]
    fn compose_exhaustive_pick_uses_every_kind_once() {
        let specs = compose_pipeline(9, DEFAULT_BANK.len(), &DEFAULT_BANK).unwrap();
        let mut kinds: Vec<_> = specs.iter().map(|s| s.kind).collect();
        kinds.sort_by_key(|k| k.name());
        let mut expected: Vec<_> = DEFAULT_BANK.to_vec();
        expected.sort_by_key(|k| k.name());
        assert_eq!(kinds, expected);
    }

    #[test]
    fn compose_is_deterministic() {
        let a = compose_pipeline(0, 3, &DEFAULT_BANK).unwrap();
        let b = compose_pipeline(0, 3, &DEFAULT_BANK).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn compose_rejects_bad_picks() {
        assert!(matches!(
            compose_pipeline(0, 1, &[]),
            Err(AugmentError::EmptyBank)
        ));
        assert!(matches!(
            compose_pipeline(0, 7, &DEFAULT_BANK),
            Err(AugmentError::InvalidPickCount { .. })
        ));
    }

    #[test]
    fn compose_pick_frequency_is_uniform() {
        let mut counts = std::collections::HashMap::new();
        let draws = 10_000usize;
        for i in 0..draws {
            for spec in compose_pipeline(i as u64, 3, &DEFAULT_BANK).unwrap() {
                *counts.entry(spec.kind).or_insert(0usize) += 1;
            }
        }
        for kind in DEFAULT_BANK {
            let freq = counts[&kind] as f64 / draws as f64;
            assert!(
                (freq - 0.5).abs() < 0.02,
                "{kind} frequency {freq} not within 0.5 +/- 0.02"
            );
        }
    }

    #[test]
    fn synthesis_preserves_labels_and_replays() {
        let seed_set = tiny_seed_set(6);
        let sets = synthesize_sample_sets(&seed_set, 3, Recipe::Mnist, 123).unwrap();
        assert_eq!(sets.len(), 3);
        for set in &sets {
            assert_eq!(set.labels, seed_set.labels());
            assert_eq!(set.images.len(), seed_set.len());
        }
        let replay = synthesize_sample_sets(&seed_set, 3, Recipe::Mnist, 123).unwrap();
        for (a, b) in sets.iter().zip(&replay) {
            assert_eq!(a.images, b.images);
            assert_eq!(a.provenance, b.provenance);
        }
    }

    #[test]
    fn different_indices_get_different_provenance() {
        let seed_set = tiny_seed_set(2);
        let sets = synthesize_sample_sets(&seed_set, 2, Recipe::Cifar, 7).unwrap();
        assert_ne!(sets[0].provenance, sets[1].provenance);
    }

    #[test]
    fn corruption_mixed_budget_split() {
        let specs_first = recipe_specs(Recipe::CorruptionMixed, 0, 100, 5).unwrap();
        assert_eq!(specs_first.len(), 1);
        assert_eq!(specs_first[0].kind, TransformKind::Corruption);
        let specs_cycled = recipe_specs(Recipe::CorruptionMixed, 17, 100, 5).unwrap();
        assert_eq!(
            specs_cycled[0].params.get("type"),
            Some(&ParamValue::Text(ALL_CORRUPTIONS[2].name().to_string()))
        );
        let specs_rest = recipe_specs(Recipe::CorruptionMixed, 61, 100, 5).unwrap();
        assert_eq!(specs_rest.len(), 3);
        assert!(specs_rest.iter().all(|s| s.kind != TransformKind::Corruption));
    }

    #[test]
    fn default_sample_set_count() {
        assert_eq!(DEFAULT_SAMPLE_SET_COUNT, 400);
    }

    #[test]
    fn mnist_recipe_starts_with_background_replace() {
        let specs = recipe_specs(Recipe::Mnist, 4, 10, 9).unwrap();
        assert_eq!(specs[0].kind, TransformKind::BackgroundReplace);
        assert_eq!(specs.len(), 4);
    }

    #[test]
    fn identity_pipeline_reproduces_seed_set_after_quantization() {
        // a pipeline of identity-parameter transforms must leave the (already
        // quantized) seed images untouched
        let images = vec![digit_like(12, 12).quantize_u8(), digit_like(12, 12).quantize_u8()];
        let seed_set = LabeledDataset::new("seed", images, vec![0, 1]).unwrap();
        let identity = [
            TransformSpec::new(TransformKind::Rotation, 1).with_param("degrees", ParamValue::Float(0.0)),
            TransformSpec::new(TransformKind::Brightness, 2).with_param("factor", ParamValue::Float(1.0)),
            TransformSpec::new(TransformKind::Translation, 3)
                .with_param("dx", ParamValue::Float(0.0))
                .with_param("dy", ParamValue::Float(0.0)),
        ];
        for (j, img) in seed_set.images().iter().enumerate() {
            let mut current = img.clone();
            for spec in &identity {
                let per_image = spec.with_seed(rng::derive_seed(spec.seed, "image", &[j as u64]));
                current = apply_transform(&current, &per_image).unwrap();
            }
            assert_eq!(&current.quantize_u8(), img);
        }
    }

    #[test]
    fn parallel_synthesis_matches_serial() {
        let seed_set = tiny_seed_set(4);
        let parallel = synthesize_sample_sets(&seed_set, 4, Recipe::Cifar, 99).unwrap();
        let serial: Vec<_> = (0..4)
            .map(|i| {
                synthesize_sample_set(&seed_set, Recipe::Cifar, i, 4, 99, &TransformCtx::default())
                    .unwrap()
            })
            .collect();
        for (a, b) in parallel.iter().zip(&serial) {
            assert_eq!(a.images, b.images);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn random_specs_keep_pixels_in_range(seed in any::<u64>(), pick in 1usize..=6) {
            let img = digit_like(10, 10).to_rgb();
            let specs = compose_pipeline(seed, pick, &DEFAULT_BANK).unwrap();
            let mut current = img;
            for spec in &specs {
                current = apply_transform(&current, spec).unwrap();
                prop_assert!(current.pixels().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
                prop_assert_eq!(current.dim(), (3, 10, 10));
            }
        }

        #[test]
        fn random_corruptions_keep_pixels_in_range(seed in any::<u64>(), idx in 0usize..15, sev in 1u8..=5) {
            let img = digit_like(9, 11).to_rgb();
            let out = apply_corruption(&img, ALL_CORRUPTIONS[idx], sev, seed).unwrap();
            prop_assert!(out.pixels().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        }
    }
}
