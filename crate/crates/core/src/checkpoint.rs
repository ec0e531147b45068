//! Binary checkpoint files.
//!
//! Layout: the 8-byte magic `HSDMCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a UTF-8 JSON header, then every tensor
//! as little-endian `f64` in the order listed by the header.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{BaselineConfig, Normalizer};
use crate::gnn::{InputDims, ModelConfig, ParamStore};
use crate::ingest::{FeatureOptions, FeaturePipeline};
use crate::nn::{Activation, MlpParams, MlpSpec};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 8] = b"HSDMCKPT";
pub const FORMAT_VERSION: u32 = 1;

const BASELINE_ROLE: &str = "baseline";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    WrongKind { found: &'static str, expected: &'static str },
}

#[derive(Clone, Debug, PartialEq)]
pub enum SavedModel {
    Gnn {
        train: TrainConfig,
        input_dims: InputDims,
        params: ParamStore,
    },
    Baseline {
        config: BaselineConfig,
        params: MlpParams,
    },
}

impl SavedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            SavedModel::Gnn { .. } => "gnn",
            SavedModel::Baseline { .. } => "baseline",
        }
    }
}

/// Everything needed to score new locations of the training region.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub region: String,
    pub species_ids: Vec<String>,
    pub features: FeatureOptions,
    pub normalizer: Option<Normalizer>,
    /// Last completed epoch, zero-based.
    pub epoch: usize,
    pub model: SavedModel,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ModelHeader {
    Gnn { train: TrainConfig, input_dims: InputDims },
    Baseline { config: BaselineConfig, input_dim: usize },
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Header {
    region: String,
    species_ids: Vec<String>,
    features: FeatureOptions,
    normalizer: Option<Normalizer>,
    epoch: usize,
    model: ModelHeader,
    dtype: String,
    endianness: String,
    tensors: Vec<TensorEntry>,
}

fn mlp_entries(role: &str, mlp: &MlpParams) -> Vec<TensorEntry> {
    mlp.weights
        .iter()
        .zip(&mlp.biases)
        .enumerate()
        .flat_map(|(i, (w, b))| {
            [
                TensorEntry {
                    name: format!("{role}/{i}/weight"),
                    shape: [w.nrows(), w.ncols()],
                },
                TensorEntry {
                    name: format!("{role}/{i}/bias"),
                    shape: [1, b.len()],
                },
            ]
        })
        .collect()
}

impl Checkpoint {
    pub fn pipeline(&self) -> FeaturePipeline {
        FeaturePipeline {
            include_coords: self.features.include_coords,
            normalizer: self.normalizer.clone(),
        }
    }

    pub fn gnn(&self) -> Result<(&TrainConfig, InputDims, &ParamStore), CheckpointError> {
        match &self.model {
            SavedModel::Gnn {
                train,
                input_dims,
                params,
            } => Ok((train, *input_dims, params)),
            other => Err(CheckpointError::WrongKind {
                found: other.kind(),
                expected: "gnn",
            }),
        }
    }

    pub fn baseline(&self) -> Result<(&BaselineConfig, &MlpParams), CheckpointError> {
        match &self.model {
            SavedModel::Baseline { config, params } => Ok((config, params)),
            other => Err(CheckpointError::WrongKind {
                found: other.kind(),
                expected: "baseline",
            }),
        }
    }

    /// Fails unless `model` produces parameters of exactly the stored shapes.
    pub fn check_model_config(&self, model: &ModelConfig) -> Result<(), CheckpointError> {
        let (train, dims, params) = self.gnn()?;
        if model.latent_dim != train.model.latent_dim {
            return Err(CheckpointError::ShapeMismatch(format!(
                "latent_dim {} requested, checkpoint has {}",
                model.latent_dim, train.model.latent_dim
            )));
        }
        params
            .check(model, dims)
            .map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))
    }

    fn header_and_tensors(&self) -> (Header, Vec<&[f64]>) {
        let (model, entries, tensors): (ModelHeader, Vec<TensorEntry>, Vec<&[f64]>) = match &self.model {
            SavedModel::Gnn {
                train,
                input_dims,
                params,
            } => (
                ModelHeader::Gnn {
                    train: *train,
                    input_dims: *input_dims,
                },
                params
                    .mlps
                    .iter()
                    .flat_map(|(role, mlp)| mlp_entries(role, mlp))
                    .collect(),
                params.mlps.values().flat_map(|m| m.tensors()).collect(),
            ),
            SavedModel::Baseline { config, params } => (
                ModelHeader::Baseline {
                    config: *config,
                    input_dim: params.input_dim(),
                },
                mlp_entries(BASELINE_ROLE, params),
                params.tensors().collect(),
            ),
        };
        let header = Header {
            region: self.region.clone(),
            species_ids: self.species_ids.clone(),
            features: self.features,
            normalizer: self.normalizer.clone(),
            epoch: self.epoch,
            model,
            dtype: "f64".into(),
            endianness: "little".into(),
            tensors: entries,
        };
        (header, tensors)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (header, tensors) = self.header_and_tensors();
        let json = serde_json::to_vec(&header).expect("header serializes");
        let payload: usize = tensors.iter().map(|t| t.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in tensors {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let corrupt = |m: &str| CheckpointError::Corrupt(m.to_string());
        if bytes.len() < 20 {
            return Err(corrupt("file shorter than the fixed preamble"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|n| n.checked_add(20))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| corrupt("header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])
            .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
        if header.dtype != "f64" || header.endianness != "little" {
            return Err(CheckpointError::Corrupt(format!(
                "unsupported tensor encoding {}/{}",
                header.dtype, header.endianness
            )));
        }

        let mut payload = &bytes[header_end..];
        let expected: usize = header.tensors.iter().map(|t| t.shape[0] * t.shape[1] * 8).sum();
        if payload.len() != expected {
            return Err(CheckpointError::Corrupt(format!(
                "payload has {} bytes, header describes {expected}",
                payload.len()
            )));
        }
        let mut entries = header.tensors.iter();
        let mut next_tensor = |name: &str, shape: (usize, usize)| -> Result<Vec<f64>, CheckpointError> {
            let entry = entries
                .next()
                .ok_or_else(|| CheckpointError::ShapeMismatch(format!("missing tensor {name}")))?;
            if entry.name != name || entry.shape != [shape.0, shape.1] {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "expected {name} {shape:?}, found {} {:?}",
                    entry.name, entry.shape
                )));
            }
            let n = shape.0 * shape.1;
            let (head, rest) = payload.split_at(n * 8);
            payload = rest;
            Ok(head
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let mut read_mlp = |role: &str, spec: &MlpSpec| -> Result<MlpParams, CheckpointError> {
            let mut weights = Vec::new();
            let mut biases = Vec::new();
            for (i, (fan_in, fan_out)) in spec.layer_shapes().into_iter().enumerate() {
                let w = next_tensor(&format!("{role}/{i}/weight"), (fan_in, fan_out))?;
                let b = next_tensor(&format!("{role}/{i}/bias"), (1, fan_out))?;
                weights.push(Array2::from_shape_vec((fan_in, fan_out), w).expect("length checked"));
                biases.push(Array1::from(b));
            }
            Ok(MlpParams {
                weights,
                biases,
                activation: spec.activation,
            })
        };

        let model = match header.model {
            ModelHeader::Gnn { train, input_dims } => {
                let mut roles = train.model.roles(input_dims);
                roles.sort_by(|a, b| a.0.cmp(&b.0));
                let mut params = ParamStore::default();
                for (role, spec) in roles {
                    let mlp = read_mlp(&role, &spec)?;
                    params.mlps.insert(role, mlp);
                }
                SavedModel::Gnn {
                    train,
                    input_dims,
                    params,
                }
            }
            ModelHeader::Baseline { config, input_dim } => {
                let spec = config.mlp_spec(input_dim, header.species_ids.len());
                SavedModel::Baseline {
                    config,
                    params: read_mlp(BASELINE_ROLE, &spec)?,
                }
            }
        };
        if header.tensors.len() != count_tensors(&model) {
            return Err(CheckpointError::ShapeMismatch(format!(
                "header lists {} tensors, model has {}",
                header.tensors.len(),
                count_tensors(&model)
            )));
        }
        Ok(Self {
            region: header.region,
            species_ids: header.species_ids,
            features: header.features,
            normalizer: header.normalizer,
            epoch: header.epoch,
            model,
        })
    }

    /// Writes through a temporary file and a rename, so an interrupted save
    /// leaves any previous checkpoint intact.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let io = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let tmp = path.with_extension("bin.tmp");
        {
            let mut f = fs::File::create(&tmp).map_err(io)?;
            f.write_all(&self.to_bytes()).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn count_tensors(model: &SavedModel) -> usize {
    match model {
        SavedModel::Gnn { params, .. } => params.mlps.values().map(|m| m.weights.len() * 2).sum(),
        SavedModel::Baseline { params, .. } => params.weights.len() * 2,
    }
}

/// Activation recorded for a saved model.
pub fn saved_activation(model: &SavedModel) -> Activation {
    match model {
        SavedModel::Gnn { train, .. } => train.model.activation,
        SavedModel::Baseline { config, .. } => config.activation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp_init;

    fn gnn_checkpoint(latent: usize) -> Checkpoint {
        let train = TrainConfig {
            model: ModelConfig {
                latent_dim: latent,
                num_message_passing_steps: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        let dims = InputDims {
            location: 3,
            species: 4,
            edge: 1,
        };
        Checkpoint {
            region: "XYZ".into(),
            species_ids: vec!["a".into(), "b".into()],
            features: FeatureOptions::default(),
            normalizer: Some(Normalizer {
                min: vec![0.0, -1.0, 2.0],
                max: vec![1.0, 1.0, 5.5],
            }),
            epoch: 7,
            model: SavedModel::Gnn {
                train,
                input_dims: dims,
                params: ParamStore::init(&train.model, dims, 3).unwrap(),
            },
        }
    }

    #[test]
    fn gnn_round_trip_is_bit_exact() {
        let ck = gnn_checkpoint(8);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn header_floats_round_trip_exactly() {
        let mut ck = gnn_checkpoint(4);
        let awkward: Vec<f64> = (1..40).map(|i| (i as f64).sqrt() * 1e-3 + 1.0 / 3.0 * i as f64).collect();
        ck.normalizer = Some(Normalizer {
            min: awkward.clone(),
            max: awkward.iter().map(|v| v.exp()).collect(),
        });
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.normalizer, ck.normalizer);
    }

    #[test]
    fn baseline_round_trip() {
        let config = BaselineConfig {
            num_layers: 2,
            hidden_dim: 5,
            ..Default::default()
        };
        let params = mlp_init(&config.mlp_spec(4, 3), 11);
        let ck = Checkpoint {
            region: "R".into(),
            species_ids: vec!["a".into(), "b".into(), "c".into()],
            features: FeatureOptions::default(),
            normalizer: None,
            epoch: 0,
            model: SavedModel::Baseline { config, params },
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert!(back.gnn().is_err());
    }

    #[test]
    fn truncation_and_bad_magic_are_corrupt() {
        let bytes = gnn_checkpoint(4).to_bytes();
        for cut in [0, 10, 19, 40, bytes.len() - 1] {
            assert!(
                matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(CheckpointError::Corrupt(_))),
                "cut at {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = gnn_checkpoint(4).to_bytes();
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::VersionMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn latent_mismatch_is_reported() {
        let ck = gnn_checkpoint(32);
        let mut model = ck.gnn().unwrap().0.model;
        assert!(ck.check_model_config(&model).is_ok());
        model.latent_dim = 16;
        let err = ck.check_model_config(&model).unwrap_err();
        assert!(err.to_string().contains("16"), "{err}");
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.bin");
        let ck = gnn_checkpoint(4);
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert!(!path.with_extension("bin.tmp").exists());
        assert!(matches!(
            Checkpoint::load(dir.path().join("missing.bin")),
            Err(CheckpointError::Io { .. })
        ));
    }
}
