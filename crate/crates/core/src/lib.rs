//! Species distribution modelling with a heterogeneous graph neural network.
//!
//! Locations and species are two node sets of a bipartite graph whose edges
//! are presence-only detections. An Interaction Network encodes both node
//! sets, passes messages along the typed edge sets and scores candidate
//! (location, species) links with a dot product. A feed-forward multi-species
//! MLP serves as the baseline.
//!
//! The crate covers the whole pipeline: CSV ingestion ([`ingest`]), the typed
//! graph container ([`graph`]), a small reverse-mode autodiff engine
//! ([`nn`]), the model ([`gnn`]), pseudo-negative sampling ([`sampling`]),
//! training ([`train`], [`baseline`]), checkpoints ([`checkpoint`]) and
//! per-species ROC AUC evaluation ([`eval`]).

pub mod baseline;
pub mod checkpoint;
pub mod eval;
pub mod gnn;
pub mod gradcheck;
pub mod graph;
pub mod ingest;
pub mod nn;
pub mod rng;
pub mod sampling;
pub mod synthetic;
pub mod train;

pub use baseline::{
    predict_baseline, train_baseline, BaselineConfig, BaselineData, BaselineError, Normalizer,
    TrainedBaseline,
};
pub use checkpoint::{Checkpoint, CheckpointError, SavedModel};
pub use eval::{auc_roc, build_test_graph, evaluate_checkpoint, EvalError, EvalReport, SpeciesScore};
pub use gnn::{
    decode_scores, encode, forward, loss_and_gradients, process_step, Direction, InputDims,
    LatentGraph, ModelConfig, ModelError, ParamStore,
};
pub use gradcheck::{GradcheckProblem, GradcheckReport, Tolerance};
pub use graph::{EdgeSet, GraphError, NodeSet, TypedGraph};
pub use ingest::{
    build_training_graph, load_region, write_region, FeatureOptions, IngestError, RegionDataset,
    RegionPaths, TrainingGraph,
};
pub use nn::{bce_with_logits, Activation, Aggregation, MlpParams, MlpSpec};
pub use sampling::{
    LabeledPair, NegativeCount, NegativeSampler, Proportion, SamplingConfig, SamplingError,
    SamplingStrategy,
};
pub use train::{train, train_with_hook, EpochRecord, TrainConfig, TrainError};
