//! Core data types shared across the toolkit: images, labeled datasets and
//! synthesized sample sets.

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augment::TransformSpec;

/// Errors raised by data-type constructors and dataset validation.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("image must have 1 or 3 channels, got {0}")]
    BadChannelCount(usize),
    #[error("image has zero spatial extent ({h}x{w})")]
    EmptyImage { h: usize, w: usize },
    #[error("pixel value {value} at {index:?} outside [0, 1] or non-finite")]
    PixelOutOfRange { value: f32, index: (usize, usize, usize) },
    #[error("dataset has {images} images but {labels} labels")]
    LengthMismatch { images: usize, labels: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("labels are not contiguous: class {missing} unused; remap labels to 0..{suggested}")]
    LabelGap { missing: usize, suggested: usize },
}

/// A single image: channels x height x width, pixels in `[0, 1]`.
///
/// Every transform in the bank preserves shape and keeps pixels finite and in
/// range, so the invariant is checked once at construction and at the few
/// places raw buffers enter the system.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pixels: Array3<f32>,
}

impl ImageTensor {
    /// Validate and wrap a CHW pixel array.
    pub fn new(pixels: Array3<f32>) -> Result<Self, DataError> {
        let (c, h, w) = pixels.dim();
        if c != 1 && c != 3 {
            return Err(DataError::BadChannelCount(c));
        }
        if h == 0 || w == 0 {
            return Err(DataError::EmptyImage { h, w });
        }
        for ((ci, hi, wi), &v) in pixels.indexed_iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(DataError::PixelOutOfRange {
                    value: v,
                    index: (ci, hi, wi),
                });
            }
        }
        Ok(Self { pixels })
    }

    /// Wrap without validating. For internal use where the producer already
    /// guarantees the invariant (e.g. a clamped transform output).
    pub(crate) fn from_valid(pixels: Array3<f32>) -> Self {
        debug_assert!(pixels
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        Self { pixels }
    }

    /// A black image of the given shape.
    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self, DataError> {
        Self::new(Array3::zeros((channels, height, width)))
    }

    pub fn pixels(&self) -> &Array3<f32> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array3<f32> {
        self.pixels
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.pixels.dim()
    }

    /// Per-pixel luminance. Uses ITU-R 601 weights for RGB and a copy for
    /// single-channel images. Result is (height, width).
    pub fn luminance(&self) -> ndarray::Array2<f32> {
        let (c, h, w) = self.dim();
        if c == 1 {
            return self.pixels.index_axis(Axis(0), 0).to_owned();
        }
        let mut out = ndarray::Array2::zeros((h, w));
        let r = self.pixels.index_axis(Axis(0), 0);
        let g = self.pixels.index_axis(Axis(0), 1);
        let b = self.pixels.index_axis(Axis(0), 2);
        ndarray::Zip::from(&mut out)
            .and(&r)
            .and(&g)
            .and(&b)
            .for_each(|o, &r, &g, &b| *o = 0.299 * r + 0.587 * g + 0.114 * b);
        out
    }

    /// Replicate a single-channel image to 3 channels; RGB images pass through.
    pub fn to_rgb(&self) -> ImageTensor {
        if self.channels() == 3 {
            return self.clone();
        }
        let (_, h, w) = self.dim();
        let mut out = Array3::zeros((3, h, w));
        for c in 0..3 {
            out.index_axis_mut(Axis(0), c)
                .assign(&self.pixels.index_axis(Axis(0), 0));
        }
        ImageTensor::from_valid(out)
    }

    /// Snap every pixel onto the 8-bit grid (`round(v * 255) / 255`).
    ///
    /// Synthesized images are quantized like this before persistence so the
    /// lossless on-disk raster and the in-memory tensor are exactly equal.
    pub fn quantize_u8(&self) -> ImageTensor {
        let q = self.pixels.mapv(|v| (v * 255.0).round().clamp(0.0, 255.0) / 255.0);
        ImageTensor::from_valid(q)
    }

    /// Bilinear sample at fractional source coordinates with zero fill
    /// outside the image.
    pub fn sample_bilinear(&self, channel: usize, y: f32, x: f32) -> f32 {
        let (_, h, w) = self.dim();
        let read = |yi: i64, xi: i64| -> f32 {
            if yi < 0 || xi < 0 || yi >= h as i64 || xi >= w as i64 {
                0.0
            } else {
                self.pixels[(channel, yi as usize, xi as usize)]
            }
        };
        let y0 = y.floor();
        let x0 = x.floor();
        let dy = y - y0;
        let dx = x - x0;
        let (y0, x0) = (y0 as i64, x0 as i64);
        let top = read(y0, x0) * (1.0 - dx) + read(y0, x0 + 1) * dx;
        let bot = read(y0 + 1, x0) * (1.0 - dx) + read(y0 + 1, x0 + 1) * dx;
        top * (1.0 - dy) + bot * dy
    }
}

/// Images with integer class labels; the training / seed / test substrate.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub id: String,
    images: Vec<ImageTensor>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    /// Build a dataset, inferring the class count from the labels.
    ///
    /// Labels must be contiguous `0..K`; gaps are rejected with a remap
    /// suggestion because downstream heads size their output from `K`.
    pub fn new(
        id: impl Into<String>,
        images: Vec<ImageTensor>,
        labels: Vec<usize>,
    ) -> Result<Self, DataError> {
        if images.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        if images.len() != labels.len() {
            return Err(DataError::LengthMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
        let mut seen = vec![false; num_classes];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let used = seen.iter().filter(|s| **s).count();
            return Err(DataError::LabelGap {
                missing,
                suggested: used,
            });
        }
        Ok(Self {
            id: id.into(),
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn images(&self) -> &[ImageTensor] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &ImageTensor {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// A new dataset holding the given indices, in order.
    pub fn subset(&self, id: impl Into<String>, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            id: id.into(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Content hash over pixel bytes and labels, for provenance records.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for img in &self.images {
            for &v in img.pixels().iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        for &l in &self.labels {
            hasher.update((l as u64).to_le_bytes());
        }
        hex_digest(&hasher.finalize())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// A synthesized, transformed copy of a seed set with full provenance.
///
/// Labels are inherited from the seed set verbatim: every transform in the
/// bank is label-preserving.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub id: String,
    pub seed_set_id: String,
    pub images: Vec<ImageTensor>,
    pub labels: Vec<usize>,
    pub provenance: Vec<TransformSpec>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// View the sample set as a labeled dataset (shares the seed set's
    /// class space).
    pub fn to_dataset(&self, num_classes: usize) -> LabeledDataset {
        LabeledDataset {
            id: self.id.clone(),
            images: self.images.clone(),
            labels: self.labels.clone(),
            num_classes,
        }
    }
}

/// Manifest row describing a stored sample set; serialized alongside images.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSetManifest {
    pub id: String,
    pub seed_set_id: String,
    pub len: usize,
    pub transforms: Vec<TransformSpec>,
}
