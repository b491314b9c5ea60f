//! Versioned checkpoint container: a JSON header (architecture, hyper-
//! parameters, epoch, tensor inventory) followed by raw little-endian f32
//! parameter and buffer payloads.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::arch::{ArchTag, Architecture};
use super::model::{build_model, CoTrainedModel, HyperParams, ModelError};

const MAGIC: &[u8; 8] = b"CAMECKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint header: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint layout mismatch: {0}")]
    Layout(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: Architecture,
    hp: HyperParams,
    num_classes: usize,
    epoch: usize,
    params: Vec<TensorInfo>,
    buffers: Vec<TensorInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

fn tensor_info(names: &[String], tensors: &[ArrayD<f32>]) -> Vec<TensorInfo> {
    names
        .iter()
        .zip(tensors)
        .map(|(name, t)| TensorInfo {
            name: name.clone(),
            shape: t.shape().to_vec(),
        })
        .collect()
}

pub fn save_checkpoint(model: &CoTrainedModel, path: &Path) -> Result<(), CheckpointError> {
    let header = Header {
        arch: model.arch.clone(),
        hp: model.hp.clone(),
        num_classes: model.num_classes,
        epoch: model.epoch,
        params: tensor_info(model.store.names(), model.store.params()),
        buffers: tensor_info(model.store.buffer_names(), model.store.buffers()),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for tensor in model.store.params().iter().chain(model.store.buffers()) {
        for &v in tensor.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CoTrainedModel, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;

    header.hp.validate()?;
    let tag = ArchTag::parse(&header.hp.arch).map_err(ModelError::from)?;
    let (mut store, net, arch) = build_model::<f32>(
        tag,
        header.arch.in_channels,
        header.arch.height,
        header.arch.width,
        header.num_classes,
        header.hp.projection_dim,
        header.hp.seed,
    )?;

    let check = |infos: &[TensorInfo], names: &[String], tensors: &[ArrayD<f32>], kind: &str| {
        if infos.len() != tensors.len() {
            return Err(CheckpointError::Layout(format!(
                "{kind} count {} vs rebuilt {}",
                infos.len(),
                tensors.len()
            )));
        }
        for (info, (name, tensor)) in infos.iter().zip(names.iter().zip(tensors)) {
            if &info.name != name || info.shape != tensor.shape() {
                return Err(CheckpointError::Layout(format!(
                    "{kind} `{}` {:?} vs rebuilt `{}` {:?}",
                    info.name,
                    info.shape,
                    name,
                    tensor.shape()
                )));
            }
        }
        Ok(())
    };
    check(&header.params, store.names(), store.params(), "param")?;
    check(&header.buffers, store.buffer_names(), store.buffers(), "buffer")?;

    let mut read_tensor = |shape: &[usize]| -> Result<ArrayD<f32>, CheckpointError> {
        let count: usize = shape.iter().product();
        let mut bytes = vec![0u8; count * 4];
        r.read_exact(&mut bytes)?;
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(ArrayD::from_shape_vec(shape.to_vec(), values)
            .map_err(|e| CheckpointError::Layout(e.to_string()))?)
    };
    for (i, info) in header.params.iter().enumerate() {
        let tensor = read_tensor(&info.shape)?;
        store.set_param_raw(i, tensor);
    }
    for (i, info) in header.buffers.iter().enumerate() {
        let tensor = read_tensor(&info.shape)?;
        store.set_buffer_raw(i, tensor);
    }

    Ok(CoTrainedModel {
        store,
        net,
        arch,
        hp: header.hp,
        num_classes: header.num_classes,
        epoch: header.epoch,
    })
}
