//! Batch commands behind the `hetero-sdm` binary: train, eval, sweep and
//! gradcheck. Each command returns a [`CliError`] whose
//! [`exit_code`](CliError::exit_code) is what the process exits with.

pub mod commands;
pub mod manifest;
pub mod sweep;

use thiserror::Error;

use hetero_sdm::{
    BaselineError, CheckpointError, EvalError, IngestError, ModelError, SamplingError, TrainError,
};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: manifest, flags, configuration or data files.
    #[error("{0}")]
    Validation(String),
    /// Failure while running: I/O, non-finite loss.
    #[error("{0}")]
    Runtime(String),
    #[error("gradient check failed: {0}")]
    GradcheckBreach(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::GradcheckBreach(_) => 3,
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_)
            | TrainError::Model(ModelError::InvalidConfig(_))
            | TrainError::Sampling(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::InvalidConfig(_) | BaselineError::EmptyInput => CliError::Validation(e.to_string()),
            BaselineError::Ingest(inner) => inner.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SamplingError> for CliError {
    fn from(e: SamplingError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Checkpoint(c) => c.into(),
            EvalError::Ingest(i) => i.into(),
            EvalError::RegionMismatch(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
