//! Binary checkpoint format.
//!
//! ```text
//! b"MTADGAT\0"             8-byte magic
//! u64 LE                   header length in bytes
//! JSON header              version, model config, norm stats, feature names,
//!                          training metadata, tensor manifest (name, shape, offset)
//! f64 LE * total           parameter blob in manifest order
//! ```
//!
//! Offsets in the manifest count `f64` elements from the start of the blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{ModelConfig, ModelParams};
use crate::preprocess::NormStats;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MTADGAT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Distinct ways a checkpoint can fail to load.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("checkpoint tensor {name} has shape {found:?}, its model config implies {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// Facts about the run that produced the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epoch: usize,
    pub final_loss: f64,
    pub seed: u64,
}

/// Everything needed to score new data with a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub norm: NormStats,
    pub feature_names: Vec<String>,
    pub params: ModelParams,
    pub meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    norm: NormStats,
    feature_names: Vec<String>,
    meta: TrainMeta,
    tensors: Vec<ManifestEntry>,
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let mut tensors = Vec::new();
        for (name, t) in crate::network::PARAM_NAMES.iter().zip(self.params.tensors()) {
            tensors.push(ManifestEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            model: self.model.clone(),
            norm: self.norm.clone(),
            feature_names: self.feature_names.clone(),
            meta: self.meta.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serialises");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("missing magic bytes"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if len > body.len() {
            return Err(corrupt(format!("header claims {len} bytes, file has {}", body.len())));
        }
        let probe: serde_json::Value =
            serde_json::from_slice(&body[..len]).map_err(|e| corrupt(format!("header is not valid JSON: {e}")))?;
        let version = probe.get("version").and_then(|v| v.as_u64()).ok_or_else(|| corrupt("header has no version"))?;
        if version != CHECKPOINT_VERSION as u64 {
            return Err(CheckpointError::UnsupportedVersion {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                supported: CHECKPOINT_VERSION,
            });
        }
        let header: Header = serde_json::from_value(probe).map_err(|e| corrupt(format!("malformed header: {e}")))?;
        header
            .model
            .validate()
            .map_err(|e| corrupt(format!("invalid model config in header: {e}")))?;
        if header.norm.k() != header.model.features || header.norm.max.len() != header.model.features {
            return Err(corrupt("normalisation stats do not match the feature count"));
        }
        if header.feature_names.len() != header.model.features {
            return Err(corrupt("feature name count does not match the feature count"));
        }

        let blob = &body[len..];
        if !blob.len().is_multiple_of(8) {
            return Err(corrupt("parameter blob is not a whole number of f64 values"));
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let layout = ModelParams::layout(&header.model);
        if header.tensors.len() != layout.len() {
            return Err(corrupt(format!(
                "manifest lists {} tensors, expected {}",
                header.tensors.len(),
                layout.len()
            )));
        }
        let mut tensors = Vec::with_capacity(layout.len());
        let mut expected_offset = 0;
        for (entry, (name, shape)) in header.tensors.iter().zip(&layout) {
            if entry.name != *name {
                return Err(corrupt(format!("manifest entry {} found where {name} was expected", entry.name)));
            }
            if entry.shape != *shape {
                return Err(CheckpointError::ShapeMismatch {
                    name: entry.name.clone(),
                    expected: shape.clone(),
                    found: entry.shape.clone(),
                });
            }
            if entry.offset != expected_offset {
                return Err(corrupt(format!("tensor {name} has offset {}, expected {expected_offset}", entry.offset)));
            }
            let numel: usize = shape.iter().product();
            let data = values
                .get(expected_offset..expected_offset + numel)
                .ok_or_else(|| corrupt(format!("parameter blob truncated inside {name}")))?;
            let t = Tensor::new(shape.clone(), data.to_vec()).map_err(|e| corrupt(format!("tensor {name}: {e}")))?;
            tensors.push(t);
            expected_offset += numel;
        }
        if expected_offset != values.len() {
            return Err(corrupt(format!(
                "{} trailing values after the last tensor",
                values.len() - expected_offset
            )));
        }
        let params =
            ModelParams::from_tensors(&header.model, tensors).map_err(|e| corrupt(format!("parameters: {e}")))?;
        Ok(Self {
            model: header.model,
            norm: header.norm,
            feature_names: header.feature_names,
            params,
            meta: header.meta,
        })
    }

    /// Raw little-endian parameter bytes (the blob after the header).
    pub fn parameter_blob(&self) -> Vec<u8> {
        self.params
            .tensors()
            .iter()
            .flat_map(|t| t.data().iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> crate::Result<()> {
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> crate::Result<Checkpoint> {
    let bytes = fs::read(path)?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let model = ModelConfig {
            window: 5,
            features: 2,
            gru_hidden: 4,
            forecast_hidden: 3,
            latent: 2,
            ..ModelConfig::default()
        };
        Checkpoint {
            params: ModelParams::init(&model, &mut ChaCha8Rng::seed_from_u64(1)),
            model,
            norm: NormStats {
                min: vec![-1.5, 0.1],
                max: vec![2.0, 0.30000000000000004],
            },
            feature_names: vec!["a".into(), "b".into()],
            meta: TrainMeta {
                epoch: 3,
                final_loss: 1.0 / 3.0,
                seed: 7,
            },
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncation_is_corrupt() {
        let bytes = sample().to_bytes();
        for cut in [0, 10, 20, bytes.len() - 3, bytes.len() - 8] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(CheckpointError::Corrupt(_))
            ));
        }
    }

    fn rewrite_header(bytes: &[u8], edit: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
        edit(&mut header);
        let json = serde_json::to_vec(&header).unwrap();
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&bytes[16 + len..]);
        out
    }

    #[test]
    fn version_and_shape_errors_are_distinct() {
        let bytes = sample().to_bytes();
        let future = rewrite_header(&bytes, |h| h["version"] = 99.into());
        assert_eq!(
            Checkpoint::from_bytes(&future),
            Err(CheckpointError::UnsupportedVersion {
                found: 99,
                supported: CHECKPOINT_VERSION
            })
        );
        let reshaped = rewrite_header(&bytes, |h| h["tensors"][1]["shape"] = serde_json::json!([3]));
        assert!(matches!(
            Checkpoint::from_bytes(&reshaped),
            Err(CheckpointError::ShapeMismatch { .. })
        ));
    }
}
