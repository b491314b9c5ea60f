//! Sample-set persistence: one directory per set holding a TOML manifest
//! (id, seed set, ordered transform specs), a label table, and losslessly
//! stored PNG images named by index.
//!
//! Synthesized tensors are already quantized onto the 8-bit grid, so a
//! save/load round trip reproduces them exactly.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::data::{ImageTensor, SampleSet, SampleSetManifest};

use super::ingest::{decode_image, parse_label_table, IngestError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    ManifestParse(#[from] toml::de::Error),
    #[error("manifest: {0}")]
    ManifestWrite(#[from] toml::ser::Error),
    #[error("png encode for {file}: {message}")]
    Encode { file: String, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{dir}: manifest promises {expected} images, found {got}")]
    CountMismatch {
        dir: String,
        expected: usize,
        got: usize,
    },
}

fn encode_png(img: &ImageTensor, path: &Path) -> Result<(), StoreError> {
    let (c, h, w) = img.dim();
    let mut bytes = Vec::with_capacity(c * h * w);
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
    image::save_buffer_with_format(
        path,
        &bytes,
        w as u32,
        h as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| StoreError::Encode {
        file: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Write a sample set under `dir` (created if needed).
pub fn save_sample_set(set: &SampleSet, dir: &Path) -> Result<(), StoreError> {
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir)?;
    let manifest = SampleSetManifest {
        id: set.id.clone(),
        seed_set_id: set.seed_set_id.clone(),
        len: set.len(),
        transforms: set.provenance.clone(),
    };
    fs::write(dir.join("manifest.toml"), toml::to_string_pretty(&manifest)?)?;
    let mut labels = String::new();
    for (i, &label) in set.labels.iter().enumerate() {
        labels.push_str(&format!("{i}\t{label}\n"));
    }
    fs::write(dir.join("labels.tsv"), labels)?;
    for (i, img) in set.images.iter().enumerate() {
        encode_png(img, &images_dir.join(format!("{i}.png")))?;
    }
    Ok(())
}

/// Load a sample set previously written by [`save_sample_set`].
pub fn load_sample_set(dir: &Path) -> Result<SampleSet, StoreError> {
    let manifest: SampleSetManifest =
        toml::from_str(&fs::read_to_string(dir.join("manifest.toml"))?)?;
    let labels = parse_label_table(&dir.join("labels.tsv"))?;
    let images_dir = dir.join("images");
    let mut images = Vec::with_capacity(manifest.len);
    for i in 0..manifest.len {
        images.push(decode_image(&images_dir.join(format!("{i}.png")))?);
    }
    if images.len() != manifest.len || labels.len() != manifest.len {
        return Err(StoreError::CountMismatch {
            dir: dir.display().to_string(),
            expected: manifest.len,
            got: images.len().min(labels.len()),
        });
    }
    Ok(SampleSet {
        id: manifest.id,
        seed_set_id: manifest.seed_set_id,
        images,
        labels,
        provenance: manifest.transforms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{synthesize_sample_sets, Recipe};
    use crate::pipeline::synthdata::synth_digits;

    #[test]
    fn sample_set_roundtrip_is_exact() {
        let seed_set = synth_digits(6, 11, "seed");
        let sets = synthesize_sample_sets(&seed_set, 1, Recipe::Mnist, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let set_dir = dir.path().join("sset-0000");
        save_sample_set(&sets[0], &set_dir).unwrap();
        let loaded = load_sample_set(&set_dir).unwrap();
        assert_eq!(loaded.id, sets[0].id);
        assert_eq!(loaded.labels, sets[0].labels);
        assert_eq!(loaded.provenance, sets[0].provenance);
        for (a, b) in loaded.images.iter().zip(&sets[0].images) {
            assert_eq!(a, b, "persisted image differs from synthesized tensor");
        }
    }
}
