//! Self-contained model snapshots.
//!
//! Layout: a magic/version line, one line of JSON header (config, scaler,
//! counters, tensor directory), a `sha256` line, then every parameter as a
//! little-endian blob in header order. The digest covers the header line
//! and all blobs, so any flipped byte outside the magic line is caught.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{AgentType, SpeedScaler};
use crate::model::{CsgConfig, CsgModel, ModelError};
use crate::tensor::{Dtype, Real, Tensor};

pub const CHECKPOINT_MAGIC: &str = "CSG-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checksum mismatch: header says {expected}, content hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("checkpoint stores {found} parameters, caller expects {expected}")]
    DtypeMismatch { found: String, expected: Dtype },
    #[error("checkpoint config differs from the expected config in: {0}")]
    ConfigMismatch(String),
    #[error("checkpoint lacks parameter {0}")]
    MissingTensor(String),
    #[error("checkpoint has unknown parameter {0}")]
    UnexpectedTensor(String),
    #[error("parameter {name}: checkpoint shape {found:?}, model shape {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    config: CsgConfig,
    scaler: SpeedScaler,
    vocabulary: Vec<AgentType>,
    step: u64,
    epoch: usize,
    /// Base seed of the run. Every random draw in training is derived from
    /// it and the counters above, so together they are the RNG state.
    seed: u64,
    tensors: Vec<TensorEntry>,
}

/// Trained model plus everything needed to use it.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Real> {
    pub model: CsgModel<T>,
    pub scaler: SpeedScaler,
    /// Generator updates performed so far.
    pub step: u64,
    pub epoch: usize,
    pub seed: u64,
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.model.params();
        let header = Header {
            format_version: FORMAT_VERSION,
            dtype: T::DTYPE.to_string(),
            config: self.model.config.clone(),
            scaler: self.scaler,
            vocabulary: self.model.config.vocabulary.clone(),
            step: self.step,
            epoch: self.epoch,
            seed: self.seed,
            tensors: params
                .iter()
                .map(|p| TensorEntry {
                    name: p.name().to_string(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
        };
        let header = serde_json::to_string(&header).expect("header serialises");
        let mut blobs = Vec::new();
        for p in &params {
            for &x in p.value.data() {
                x.write_le(&mut blobs);
            }
        }
        let digest = digest(header.as_bytes(), &blobs);
        let mut out = format!("{CHECKPOINT_MAGIC} {FORMAT_VERSION}\n{header}\nsha256 {digest}\n").into_bytes();
        out.extend_from_slice(&blobs);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let (magic, rest) = split_line(bytes)?;
        let version = std::str::from_utf8(magic)
            .ok()
            .and_then(|l| l.strip_prefix(CHECKPOINT_MAGIC))
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| CheckpointError::Malformed("not a checkpoint file".into()))?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (header_bytes, rest) = split_line(rest)?;
        let (sum_line, blobs) = split_line(rest)?;
        let expected = std::str::from_utf8(sum_line)
            .ok()
            .and_then(|l| l.strip_prefix("sha256 "))
            .ok_or_else(|| CheckpointError::Malformed("missing checksum line".into()))?
            .to_string();
        let header: Result<Header, _> = serde_json::from_slice(header_bytes);
        // A short blob section is reported as truncation rather than as a
        // checksum failure, which it would also be.
        if let Ok(h) = &header {
            let needed: usize = h
                .tensors
                .iter()
                .map(|t| t.shape.iter().product::<usize>())
                .sum::<usize>()
                * T::DTYPE.size_of();
            if h.dtype == T::DTYPE.to_string() && blobs.len() < needed {
                return Err(CheckpointError::Truncated);
            }
        }
        let actual = digest(header_bytes, blobs);
        if actual != expected {
            return Err(CheckpointError::ChecksumMismatch { expected, actual });
        }
        let header = header.map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if header.dtype != T::DTYPE.to_string() {
            return Err(CheckpointError::DtypeMismatch {
                found: header.dtype,
                expected: T::DTYPE,
            });
        }
        if header.vocabulary != header.config.vocabulary {
            return Err(CheckpointError::Malformed("vocabulary disagrees with config".into()));
        }

        let mut model = CsgModel::<T>::new(header.config.clone(), 0)?;
        let width = T::DTYPE.size_of();
        let mut offset = 0;
        let mut loaded = std::collections::HashMap::new();
        for entry in &header.tensors {
            let len: usize = entry.shape.iter().product();
            let end = offset + len * width;
            let chunk = blobs.get(offset..end).ok_or(CheckpointError::Truncated)?;
            let data = chunk.chunks_exact(width).map(T::read_le).collect();
            let tensor =
                Tensor::new(entry.shape.clone(), data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            if loaded.insert(entry.name.clone(), tensor).is_some() {
                return Err(CheckpointError::Malformed(format!(
                    "duplicate parameter {}",
                    entry.name
                )));
            }
            offset = end;
        }
        if offset != blobs.len() {
            return Err(CheckpointError::Malformed("trailing bytes after parameters".into()));
        }
        for p in model.params_mut() {
            let t = loaded
                .remove(p.name())
                .ok_or_else(|| CheckpointError::MissingTensor(p.name().to_string()))?;
            if t.shape() != p.value.shape() {
                return Err(CheckpointError::TensorShape {
                    name: p.name().to_string(),
                    expected: p.value.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            p.value = t;
        }
        if let Some(name) = loaded.into_keys().min() {
            return Err(CheckpointError::UnexpectedTensor(name));
        }
        Ok(Self {
            model,
            scaler: header.scaler,
            step: header.step,
            epoch: header.epoch,
            seed: header.seed,
        })
    }

    /// Hex SHA-256 of the checkpoint content, as stored in the file.
    pub fn checksum(&self) -> String {
        let bytes = self.to_bytes();
        let (_, rest) = split_line(&bytes).expect("well-formed");
        let (_, rest) = split_line(rest).expect("well-formed");
        let (sum, _) = split_line(rest).expect("well-formed");
        String::from_utf8_lossy(&sum["sha256 ".len()..]).into_owned()
    }

    /// Short identifier derived from the checksum.
    pub fn id(&self) -> String {
        self.checksum()[..12].to_string()
    }

    /// Writes to a temporary sibling and renames it into place, so readers
    /// never observe a partial file. Returns the checksum.
    pub fn save(&self, path: &Path) -> Result<String, CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        let bytes = self.to_bytes();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        {
            let mut f = fs::File::create(&tmp).map_err(io)?;
            f.write_all(&bytes).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, path).map_err(io)?;
        Ok(self.checksum())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Loads and insists that the stored architecture equals `expected`.
    pub fn load_expecting(path: &Path, expected: &CsgConfig) -> Result<Self, CheckpointError> {
        let ckpt = Self::load(path)?;
        let diff = config_diff(&ckpt.model.config, expected);
        if !diff.is_empty() {
            return Err(CheckpointError::ConfigMismatch(diff.join(", ")));
        }
        Ok(ckpt)
    }
}

/// Names of the config fields whose values differ.
pub fn config_diff(a: &CsgConfig, b: &CsgConfig) -> Vec<String> {
    let (serde_json::Value::Object(a), serde_json::Value::Object(b)) = (
        serde_json::to_value(a).expect("config serialises"),
        serde_json::to_value(b).expect("config serialises"),
    ) else {
        unreachable!("config is a struct")
    };
    a.iter()
        .filter(|(k, v)| b.get(*k) != Some(*v))
        .map(|(k, v)| format!("{k} ({v} vs {})", b[k]))
        .collect()
}

fn digest(header: &[u8], blobs: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(header);
    h.update(blobs);
    hex::encode(h.finalize())
}

fn split_line(bytes: &[u8]) -> Result<(&[u8], &[u8]), CheckpointError> {
    let i = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(CheckpointError::Truncated)?;
    Ok((&bytes[..i], &bytes[i + 1..]))
}
