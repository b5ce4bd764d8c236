//! Versioned binary checkpoints.
//!
//! Byte layout, all integers little-endian:
//!
//! | field            | encoding                                     |
//! |------------------|----------------------------------------------|
//! | magic            | `b"GATPCKPT"`                                |
//! | version          | `u32`, currently 1 ("v1")                    |
//! | meta length      | `u64`                                        |
//! | meta             | UTF-8 JSON `{"model": ModelConfig, "loss_mode": ...}` |
//! | tensor count     | `u32`                                        |
//! | per tensor       | `u32` name length, name, `u32` rank, `u64` dims, `f64` values |
//! | checksum         | SHA-256 of every preceding byte              |
//!
//! Tensors appear in the canonical parameter order of the config. Names and
//! shapes are checked against the config before any values are read.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::trainer::LossMode;

pub const MAGIC: &[u8; 8] = b"GATPCKPT";
pub const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {VERSION})")]
    Version { found: u32 },
    #[error("checkpoint is truncated at byte {0}")]
    Truncated(usize),
    #[error("checkpoint metadata is invalid: {0}")]
    Meta(String),
    #[error("tensor {index}: expected {expected_name} {expected:?}, file has {found_name} {found:?}")]
    ShapeMismatch {
        index: usize,
        expected_name: String,
        expected: Vec<usize>,
        found_name: String,
        found: Vec<usize>,
    },
    #[error("file has {found} tensors, config needs {expected}")]
    TensorCount { expected: usize, found: usize },
    #[error("model config differs from the checkpoint: requested {requested}, stored {stored}")]
    ConfigMismatch { requested: String, stored: String },
    #[error("checksum mismatch, file is corrupted")]
    Checksum,
    #[error("{0} trailing bytes after the checksum")]
    Trailing(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    loss_mode: LossMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Loss the parameters were trained with; decides how decisions are made.
    pub loss_mode: LossMode,
    pub params: ModelParams,
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let meta = serde_json::to_vec(&Meta {
        model: ckpt.config.clone(),
        loss_mode: ckpt.loss_mode,
    })
    .expect("config serializes");
    let layout = ckpt.config.parameter_layout();
    let tensors = ckpt.params.tensors();

    let mut out = Vec::with_capacity(64 + meta.len() + ckpt.params.n_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for ((name, _), t) in layout.iter().zip(tensors) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(self.pos))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        usize::try_from(self.u64()?).map_err(|_| CheckpointError::Truncated(self.pos))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let meta_len = r.len()?;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| CheckpointError::Meta(e.to_string()))?;
    meta.model
        .validate()
        .map_err(|e| CheckpointError::Meta(e.to_string()))?;

    let layout = meta.model.parameter_layout();
    let count = r.u32()? as usize;
    if count != layout.len() {
        return Err(CheckpointError::TensorCount {
            expected: layout.len(),
            found: count,
        });
    }
    let mut tensors = Vec::with_capacity(count);
    for (index, (name, shape)) in layout.iter().enumerate() {
        let name_len = r.u32()? as usize;
        let found_name = String::from_utf8_lossy(r.take(name_len)?).into_owned();
        let rank = r.u32()? as usize;
        let mut found = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            found.push(r.len()?);
        }
        if &found_name != name || &found != shape {
            return Err(CheckpointError::ShapeMismatch {
                index,
                expected_name: name.clone(),
                expected: shape.clone(),
                found_name,
                found,
            });
        }
        let n: usize = shape.iter().product();
        let data = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(shape.clone(), data).map_err(ModelError::from)?);
    }
    let body_end = r.pos;
    let stored = r.take(CHECKSUM_LEN)?;
    if Sha256::digest(&bytes[..body_end]).as_slice() != stored {
        return Err(CheckpointError::Checksum);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Trailing(bytes.len() - r.pos));
    }
    let params = ModelParams::from_tensors(&meta.model, tensors)?;
    Ok(Checkpoint {
        config: meta.model,
        loss_mode: meta.loss_mode,
        params,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    fs::write(path, encode(ckpt)).map_err(|source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode(&bytes)
}

/// Loads a checkpoint and insists that it was saved with `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint, CheckpointError> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.config != expected {
        return Err(CheckpointError::ConfigMismatch {
            requested: serde_json::to_string(expected).unwrap_or_default(),
            stored: serde_json::to_string(&ckpt.config).unwrap_or_default(),
        });
    }
    Ok(ckpt)
}
