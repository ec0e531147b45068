//! Full-batch training of the graph model on presence-only detections and
//! resampled pseudo-negatives.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::gnn::{loss_and_gradients, InputDims, ModelConfig, ModelError, ParamStore};
use crate::graph::{EdgeSet, GraphError, TypedGraph, LOCATION, NONDET_L2S, NONDET_S2L, SPECIES};
use crate::gnn::Direction;
use crate::ingest::TrainingGraph;
use crate::nn::{Adam, AdamState, NnError};
use crate::sampling::{build_epoch_batch, LabeledPair, NegativeSampler, SamplingConfig, SamplingError};

pub use crate::nn::bce_with_logits;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss {
        epoch: usize,
        /// Parameters after the last epoch that completed cleanly.
        last_good: Box<ParamStore>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub num_epochs: usize,
    pub sampling: SamplingConfig,
    pub model: ModelConfig,
    /// Parameter initialization seed.
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            num_epochs: 200,
            sampling: SamplingConfig::default(),
            model: ModelConfig::default(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.num_epochs == 0 {
            return Err(TrainError::InvalidConfig("num_epochs must be at least 1".into()));
        }
        self.model.validate()?;
        self.sampling.validate()?;
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Wall-clock time of the epoch. Not serialized so logs stay reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

pub type TrainHistory = Vec<EpochRecord>;

/// `graph` with non-detection message edges built from `negatives` (both
/// directions when bidirectional). Returns the graph unchanged when the model
/// does not pass messages along negative edges.
pub fn with_negative_edges(
    graph: &TypedGraph,
    negatives: &[LabeledPair],
    model: &ModelConfig,
) -> Result<TypedGraph, GraphError> {
    if !model.include_negative_edges {
        return Ok(graph.clone());
    }
    let (senders, receivers): (Vec<usize>, Vec<usize>) = negatives.iter().map(|p| p.key()).unzip();
    let l2s = EdgeSet::with_unit_features(NONDET_L2S, LOCATION, SPECIES, senders, receivers)?;
    let mut g = graph.without_edge_set(NONDET_S2L);
    if model.direction == Direction::Bidirectional {
        g = g.with_edge_set(l2s.reversed(NONDET_S2L))?;
    }
    g.with_edge_set(l2s)
}

/// Message graph used after training: the training graph plus, when the
/// model uses negative edges, the negatives of the final epoch.
pub fn inference_graph(training: &TrainingGraph, config: &TrainConfig) -> Result<TypedGraph, TrainError> {
    if !config.model.include_negative_edges {
        return Ok(training.graph.clone());
    }
    let sampler = NegativeSampler::new(
        &training.positives,
        training.num_po_locations,
        training.num_background_locations,
        training.num_species(),
    )?;
    let last = config.num_epochs.saturating_sub(1) as u64;
    let negatives = sampler.sample(&config.sampling, last)?;
    Ok(with_negative_edges(&training.graph, &negatives, &config.model)?)
}

pub fn train(training: &TrainingGraph, config: &TrainConfig) -> Result<(ParamStore, TrainHistory), TrainError> {
    train_with_hook(training, config, |_, _| Ok(()))
}

/// Trains and calls `hook` after every epoch with the updated parameters.
pub fn train_with_hook<F>(
    training: &TrainingGraph,
    config: &TrainConfig,
    mut hook: F,
) -> Result<(ParamStore, TrainHistory), TrainError>
where
    F: FnMut(&EpochRecord, &ParamStore) -> Result<(), TrainError>,
{
    config.validate()?;
    let dims = InputDims::of_graph(&training.graph)?;
    let mut params = ParamStore::init(&config.model, dims, config.seed)?;
    let mut state = AdamState::new(&params);
    let adam = Adam::new(config.learning_rate);
    let sampler = NegativeSampler::new(
        &training.positives,
        training.num_po_locations,
        training.num_background_locations,
        training.num_species(),
    )?;
    let mut history = Vec::with_capacity(config.num_epochs);

    for epoch in 0..config.num_epochs {
        let started = Instant::now();
        let e = epoch as u64;
        let negatives = sampler.sample(&config.sampling, e)?;
        let batch = build_epoch_batch(&training.positives, &negatives, config.sampling.seed, e);
        let graph = with_negative_edges(&training.graph, &negatives, &config.model)?;
        let pairs: Vec<(usize, usize)> = batch.iter().map(|p| p.key()).collect();
        let labels: Vec<f64> = batch.iter().map(|p| f64::from(p.label)).collect();

        let (loss, grads) = match loss_and_gradients(&graph, &params, &config.model, &pairs, &labels) {
            Ok(v) => v,
            Err(ModelError::Nn(NnError::NonFiniteLoss(_))) => {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    last_good: Box::new(params),
                })
            }
            Err(e) => return Err(e.into()),
        };
        let before = params.clone();
        adam.step(&mut params, &grads, &mut state)?;
        if !params.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                last_good: Box::new(before),
            });
        }

        let record = EpochRecord {
            epoch,
            loss,
            n_pos: training.positives.len(),
            n_neg: negatives.len(),
            seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {epoch}: loss {loss:.6}");
        hook(&record, &params)?;
        history.push(record);
    }
    Ok((params, history))
}
