//! Feed-forward multi-species baseline.
//!
//! Inputs are environmental features scaled to `[-1, 1]`; the head emits one
//! logit per species. Presence-only locations are labelled with their observed
//! species, background locations are all-negative, and every minibatch mixes the
//! two sources at a configurable ratio. Training adds uniform noise to inputs.

use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{training_locations, FeaturePipeline, IngestError, RegionDataset};
use crate::nn::{
    mlp_forward, mlp_init, sigmoid, Activation, Adam, AdamState, MlpParams, MlpSpec, NnError, Tape,
};
use crate::rng::{streams, stream_rng};
use crate::train::EpochRecord;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("cannot fit a normalizer on zero rows")]
    EmptyInput,
    #[error("invalid baseline config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Per-feature affine map sending the fitted min to -1 and max to +1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn fit(features: &Array2<f64>) -> Result<Self, BaselineError> {
        if features.nrows() == 0 {
            return Err(BaselineError::EmptyInput);
        }
        let fold = |init: f64, f: fn(f64, f64) -> f64| {
            features
                .columns()
                .into_iter()
                .map(|c| c.iter().copied().fold(init, f))
                .collect::<Vec<_>>()
        };
        Ok(Self {
            min: fold(f64::INFINITY, f64::min),
            max: fold(f64::NEG_INFINITY, f64::max),
        })
    }

    pub fn scale(&self, column: usize, value: f64) -> f64 {
        let (lo, hi) = (self.min[column], self.max[column]);
        if hi > lo {
            2.0 * (value - lo) / (hi - lo) - 1.0
        } else {
            0.0
        }
    }

    /// Constant columns map to 0. Values outside the fitted range are not clipped.
    pub fn apply(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut out = features.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| self.scale(j, v));
        }
        out
    }
}

pub fn fit_normalizer(features: &Array2<f64>) -> Result<Normalizer, BaselineError> {
    Normalizer::fit(features)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub hidden_dim: usize,
    /// Number of hidden layers.
    pub num_layers: usize,
    /// Background rows per presence-only row in each minibatch.
    pub background_mix_ratio: f64,
    /// Half-width of the uniform input noise.
    pub noise_scale: f64,
    pub learning_rate: f64,
    pub num_epochs: usize,
    pub batch_size: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            num_layers: 4,
            background_mix_ratio: 0.5,
            noise_scale: 0.02,
            learning_rate: 1e-3,
            num_epochs: 200,
            batch_size: 256,
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |m: &str| Err(BaselineError::InvalidConfig(m.to_string()));
        if self.hidden_dim == 0 || self.num_layers == 0 || self.batch_size == 0 {
            return bad("hidden_dim, num_layers and batch_size must be positive");
        }
        if self.num_epochs == 0 {
            return bad("num_epochs must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive and finite");
        }
        if !(self.background_mix_ratio.is_finite() && self.background_mix_ratio >= 0.0) {
            return bad("background_mix_ratio must be finite and >= 0");
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad("noise_scale must be finite and >= 0");
        }
        Ok(())
    }

    pub fn mlp_spec(&self, input_dim: usize, num_species: usize) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden_dim: self.hidden_dim,
            num_hidden_layers: self.num_layers,
            output_dim: num_species,
            activation: self.activation,
        }
    }
}

/// Normalized training rows and their multi-label targets.
#[derive(Clone, Debug)]
pub struct BaselineData {
    pub features: Array2<f64>,
    pub labels: Array2<f64>,
    pub num_po: usize,
    pub pipeline: FeaturePipeline,
}

impl BaselineData {
    pub fn from_dataset(dataset: &RegionDataset, include_coords: bool) -> Result<Self, BaselineError> {
        let locs = training_locations(dataset, include_coords)?;
        let normalizer = Normalizer::fit(&locs.raw_features)?;
        let features = normalizer.apply(&locs.raw_features);
        let num_po = locs.presence.locations.len();
        let mut labels = Array2::zeros((features.nrows(), dataset.num_species()));
        for &(l, s) in &locs.presence.detections {
            labels[[l, s]] = 1.0;
        }
        Ok(Self {
            features,
            labels,
            num_po,
            pipeline: FeaturePipeline {
                include_coords,
                normalizer: Some(normalizer),
            },
        })
    }

    pub fn num_background(&self) -> usize {
        self.features.nrows() - self.num_po
    }
}

#[derive(Clone, Debug)]
pub struct TrainedBaseline {
    pub params: MlpParams,
    pub history: Vec<EpochRecord>,
}

/// Row indices of every minibatch of `epoch`: a shuffled pass over the
/// presence-only rows, each chunk topped up with background rows at
/// `background_mix_ratio`.
pub fn epoch_batches(data: &BaselineData, config: &BaselineConfig, epoch: u64) -> Vec<Vec<usize>> {
    let mut rng = stream_rng(config.seed, streams::BASELINE_BATCH, epoch);
    let mut po: Vec<usize> = (0..data.num_po).collect();
    po.shuffle(&mut rng);
    let mut bg: Vec<usize> = (data.num_po..data.features.nrows()).collect();
    bg.shuffle(&mut rng);

    let r = config.background_mix_ratio;
    let po_per_batch = ((config.batch_size as f64 / (1.0 + r)).round() as usize).max(1);
    let mut cursor = 0;
    po.chunks(po_per_batch)
        .map(|chunk| {
            let mut rows = chunk.to_vec();
            if !bg.is_empty() {
                let want = (chunk.len() as f64 * r).round() as usize;
                for _ in 0..want {
                    rows.push(bg[cursor % bg.len()]);
                    cursor += 1;
                }
            }
            rows
        })
        .collect()
}

pub fn train_baseline(
    data: &BaselineData,
    config: &BaselineConfig,
) -> Result<TrainedBaseline, BaselineError> {
    config.validate()?;
    if config.background_mix_ratio > 0.0 && data.num_background() == 0 {
        return Err(BaselineError::InvalidConfig(
            "background_mix_ratio > 0 but the region has no background locations".into(),
        ));
    }
    let spec = config.mlp_spec(data.features.ncols(), data.labels.ncols());
    spec.validate()?;
    let mut params = mlp_init(&spec, config.seed);
    let mut state = AdamState::new(&params);
    let adam = Adam::new(config.learning_rate);
    let mut history = Vec::with_capacity(config.num_epochs);

    for epoch in 0..config.num_epochs {
        let started = Instant::now();
        let mut noise_rng = stream_rng(config.seed, streams::BASELINE_NOISE, epoch as u64);
        let batches = epoch_batches(data, config, epoch as u64);
        let (mut total, mut n_pos, mut n_neg) = (0.0, 0, 0);
        for rows in &batches {
            let mut x = data.features.select(Axis(0), rows);
            if config.noise_scale > 0.0 {
                let s = config.noise_scale;
                x.mapv_inplace(|v| v + noise_rng.random_range(-s..=s));
            }
            let y = data.labels.select(Axis(0), rows);
            n_pos += y.iter().filter(|&&v| v == 1.0).count();
            n_neg += y.iter().filter(|&&v| v == 0.0).count();

            let mut tape = Tape::new();
            let bound = tape.bind_mlp(&params);
            let xv = tape.leaf(x);
            let logits = tape.mlp(&bound, xv);
            let loss = tape.bce_with_logits(logits, Arc::new(y));
            let value = tape.value(loss)[[0, 0]];
            if !value.is_finite() {
                return Err(BaselineError::NonFiniteLoss { epoch });
            }
            let grads = tape.backward(loss);
            adam.step(&mut params, &bound.gradients(&tape, &grads), &mut state)?;
            total += value;
        }
        let record = EpochRecord {
            epoch,
            loss: total / batches.len() as f64,
            n_pos,
            n_neg,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!("baseline epoch {epoch}: loss {:.6}", record.loss);
        history.push(record);
    }
    Ok(TrainedBaseline { params, history })
}

/// Species probabilities for already-normalized feature rows.
pub fn predict_baseline(
    params: &MlpParams,
    normalized_features: &Array2<f64>,
) -> Result<Array2<f64>, BaselineError> {
    Ok(mlp_forward(params, normalized_features.view())?.mapv(sigmoid))
}
