//! Dataset ingestion: IDX binary pairs, class-folder trees, and manifest
//! directories (index-named images plus a two-column label table).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use thiserror::Error;

use crate::data::{DataError, ImageTensor, LabeledDataset};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error in {file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("bad IDX file {file}: {message}")]
    Idx { file: String, message: String },
    #[error("no dataset found under {0} for the requested layout")]
    NotFound(PathBuf),
    #[error("ambiguous IDX directory {0}: multiple image/label pairs; point at a directory with one pair")]
    Ambiguous(PathBuf),
    #[error("image decode failure for {file}: {message}")]
    Decode { file: String, message: String },
    #[error("image {file} is {got}, expected {expected} like the rest of the set")]
    InconsistentShape {
        file: String,
        got: String,
        expected: String,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// On-disk dataset layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// An images/labels IDX binary pair (the classic digit-dataset format).
    IdxBinary,
    /// `root/<class>/*.png|jpg`, class directories sorted lexicographically.
    ImageFolder,
    /// `root/labels.tsv` (index, label) plus `root/images/<index>.png`;
    /// without the label table the directory is an unlabeled image set.
    Manifest,
}

/// A labeled dataset, or bare images when the layout carries no labels.
pub enum Ingested {
    Labeled(LabeledDataset),
    Unlabeled(Vec<ImageTensor>),
}

impl Ingested {
    pub fn images(&self) -> &[ImageTensor] {
        match self {
            Ingested::Labeled(set) => set.images(),
            Ingested::Unlabeled(images) => images,
        }
    }

    pub fn labeled(&self) -> Option<&LabeledDataset> {
        match self {
            Ingested::Labeled(set) => Some(set),
            Ingested::Unlabeled(_) => None,
        }
    }
}

/// Ingest a labeled dataset. Unlabeled manifest directories are an error
/// here; use [`ingest_maybe_unlabeled`] for evaluation targets.
pub fn ingest_dataset(root: &Path, layout: Layout) -> Result<LabeledDataset, IngestError> {
    match ingest_maybe_unlabeled(root, layout)? {
        Ingested::Labeled(set) => Ok(set),
        Ingested::Unlabeled(_) => Err(IngestError::Parse {
            file: root.display().to_string(),
            line: 0,
            message: "dataset has no labels".to_string(),
        }),
    }
}

pub fn ingest_maybe_unlabeled(root: &Path, layout: Layout) -> Result<Ingested, IngestError> {
    match layout {
        Layout::IdxBinary => ingest_idx(root).map(Ingested::Labeled),
        Layout::ImageFolder => ingest_image_folder(root).map(Ingested::Labeled),
        Layout::Manifest => ingest_manifest(root),
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]])
}

fn ingest_idx(root: &Path) -> Result<LabeledDataset, IngestError> {
    let mut image_files = Vec::new();
    let mut label_files = Vec::new();
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string();
        if name.ends_with("-images-idx3-ubyte") || name.ends_with("-images.idx3-ubyte") {
            image_files.push(path);
        } else if name.ends_with("-labels-idx1-ubyte") || name.ends_with("-labels.idx1-ubyte") {
            label_files.push(path);
        }
    }
    image_files.sort();
    label_files.sort();
    if image_files.is_empty() || label_files.is_empty() {
        return Err(IngestError::NotFound(root.to_path_buf()));
    }
    if image_files.len() > 1 || label_files.len() > 1 {
        return Err(IngestError::Ambiguous(root.to_path_buf()));
    }
    let images = parse_idx_images(&image_files[0])?;
    let labels = parse_idx_labels(&label_files[0])?;
    if images.len() != labels.len() {
        return Err(IngestError::Idx {
            file: root.display().to_string(),
            message: format!("{} images but {} labels", images.len(), labels.len()),
        });
    }
    let id = root.display().to_string();
    Ok(LabeledDataset::new(id, images, labels)?)
}

fn parse_idx_images(path: &Path) -> Result<Vec<ImageTensor>, IngestError> {
    let bytes = fs::read(path)?;
    let file = path.display().to_string();
    if bytes.len() < 16 {
        return Err(IngestError::Idx {
            file,
            message: "file shorter than the 16-byte header".to_string(),
        });
    }
    let magic = read_u32_be(&bytes, 0);
    if magic != 0x0000_0803 {
        return Err(IngestError::Idx {
            file,
            message: format!("magic {magic:#010x}, expected 0x00000803"),
        });
    }
    let count = read_u32_be(&bytes, 4) as usize;
    let h = read_u32_be(&bytes, 8) as usize;
    let w = read_u32_be(&bytes, 12) as usize;
    let expected = 16 + count * h * w;
    if bytes.len() != expected {
        return Err(IngestError::Idx {
            file,
            message: format!(
                "header promises {count} images of {h}x{w} ({expected} bytes), file has {}",
                bytes.len()
            ),
        });
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let base = 16 + i * h * w;
        let arr = Array3::from_shape_fn((1, h, w), |(_, y, x)| {
            bytes[base + y * w + x] as f32 / 255.0
        });
        images.push(ImageTensor::from_valid(arr));
    }
    Ok(images)
}

fn parse_idx_labels(path: &Path) -> Result<Vec<usize>, IngestError> {
    let bytes = fs::read(path)?;
    let file = path.display().to_string();
    if bytes.len() < 8 {
        return Err(IngestError::Idx {
            file,
            message: "file shorter than the 8-byte header".to_string(),
        });
    }
    let magic = read_u32_be(&bytes, 0);
    if magic != 0x0000_0801 {
        return Err(IngestError::Idx {
            file,
            message: format!("magic {magic:#010x}, expected 0x00000801"),
        });
    }
    let count = read_u32_be(&bytes, 4) as usize;
    if bytes.len() != 8 + count {
        return Err(IngestError::Idx {
            file,
            message: format!("header promises {count} labels, file has {}", bytes.len() - 8),
        });
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Decode one raster file into a CHW tensor (1 channel for grayscale
/// images, 3 otherwise).
pub fn decode_image(path: &Path) -> Result<ImageTensor, IngestError> {
    let file = path.display().to_string();
    let img = image::open(path).map_err(|e| IngestError::Decode {
        file: file.clone(),
        message: e.to_string(),
    })?;
    let tensor = match img {
        image::DynamicImage::ImageLuma8(gray) => {
            let (w, h) = gray.dimensions();
            Array3::from_shape_fn((1, h as usize, w as usize), |(_, y, x)| {
                gray.get_pixel(x as u32, y as u32).0[0] as f32 / 255.0
            })
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
                rgb.get_pixel(x as u32, y as u32).0[c] as f32 / 255.0
            })
        }
    };
    Ok(ImageTensor::from_valid(tensor))
}

fn is_raster(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("png" | "jpg" | "jpeg")
    )
}

fn ingest_image_folder(root: &Path) -> Result<LabeledDataset, IngestError> {
    let mut class_dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(IngestError::NotFound(root.to_path_buf()));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut expected_shape: Option<(usize, usize, usize)> = None;
    for (label, dir) in class_dirs.iter().enumerate() {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file() && is_raster(p))
            .collect();
        files.sort();
        for file in files {
            let img = decode_image(&file)?;
            if let Some(expected) = expected_shape {
                if img.dim() != expected {
                    return Err(IngestError::InconsistentShape {
                        file: file.display().to_string(),
                        got: format!("{:?}", img.dim()),
                        expected: format!("{expected:?}"),
                    });
                }
            } else {
                expected_shape = Some(img.dim());
            }
            images.push(img);
            labels.push(label);
        }
    }
    if images.is_empty() {
        return Err(IngestError::NotFound(root.to_path_buf()));
    }
    Ok(LabeledDataset::new(root.display().to_string(), images, labels)?)
}

/// Parse a two-column (index, label) table. Lines starting with `#` and
/// blank lines are skipped; indices must be 0..n in order.
pub fn parse_label_table(path: &Path) -> Result<Vec<usize>, IngestError> {
    let file = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no_1 = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let index: usize = parts
            .next()
            .ok_or_else(|| IngestError::Parse {
                file: file.clone(),
                line: line_no_1,
                message: "missing index column".to_string(),
            })?
            .parse()
            .map_err(|e| IngestError::Parse {
                file: file.clone(),
                line: line_no_1,
                message: format!("bad index: {e}"),
            })?;
        let label: usize = parts
            .next()
            .ok_or_else(|| IngestError::Parse {
                file: file.clone(),
                line: line_no_1,
                message: "missing label column".to_string(),
            })?
            .parse()
            .map_err(|e| IngestError::Parse {
                file: file.clone(),
                line: line_no_1,
                message: format!("bad label: {e}"),
            })?;
        if index != labels.len() {
            return Err(IngestError::Parse {
                file: file.clone(),
                line: line_no_1,
                message: format!("index {index} out of order, expected {}", labels.len()),
            });
        }
        labels.push(label);
    }
    Ok(labels)
}

fn ingest_manifest(root: &Path) -> Result<Ingested, IngestError> {
    let images_dir = root.join("images");
    let dir = if images_dir.is_dir() { images_dir } else { root.to_path_buf() };
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file() && is_raster(p))
        .collect();
    // numeric sort on the index stem
    files.sort_by_key(|p| {
        p.file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<usize>().ok())
            .unwrap_or(usize::MAX)
    });
    if files.is_empty() {
        return Err(IngestError::NotFound(root.to_path_buf()));
    }
    let images: Vec<ImageTensor> = files
        .iter()
        .map(|f| decode_image(f))
        .collect::<Result<_, _>>()?;
    let labels_path = root.join("labels.tsv");
    if labels_path.is_file() {
        let labels = parse_label_table(&labels_path)?;
        if labels.len() != images.len() {
            return Err(IngestError::Parse {
                file: labels_path.display().to_string(),
                line: 0,
                message: format!("{} labels for {} images", labels.len(), images.len()),
            });
        }
        Ok(Ingested::Labeled(LabeledDataset::new(
            root.display().to_string(),
            images,
            labels,
        )?))
    } else {
        Ok(Ingested::Unlabeled(images))
    }
}
