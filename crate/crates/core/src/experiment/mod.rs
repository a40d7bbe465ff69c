//! Experiment configuration, single runs, evaluation protocols, checkpoints
//! and results aggregation.

mod checkpoint;
mod config;
mod dataset;
mod protocol;
mod run;

use crate::data::DataError;
use crate::evaluation::EvalError;
use crate::networks::NetworkError;
use crate::tensor::TensorError;
use crate::training::TrainError;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{AnalysisSettings, CsvSource, DatasetSource, ExperimentConfig, Protocol};
pub use dataset::{load_data, window_recordings, LoadedData};
pub use protocol::{
    compare_methods, protocol_users, results_path, run_protocol, summarize, Comparison, MethodSummary,
    ProtocolOutcome,
};
pub use run::{
    append_results, excluded_users, execute_run, export_features, final_epoch_bounds, read_manifest, read_results,
    read_step_log, run_dir, run_single,
    write_run_artifacts, ResultRow, RunArtifacts, RunManifest, RunOutput, RunStatus, SplitSizes,
};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint parameter {param}: stored shape {stored:?}, expected {expected:?}")]
    ShapeMismatch {
        param: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("only {completed} of {total} runs completed: {source}")]
    PartialResults {
        completed: usize,
        total: usize,
        #[source]
        source: Box<ExperimentError>,
    },
}

pub type Result<T, E = ExperimentError> = std::result::Result<T, E>;

impl ExperimentError {
    /// Process exit code: 1 config, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Train(e) if e.is_numerical() => 3,
            ExperimentError::Eval(EvalError::Train(e)) if e.is_numerical() => 3,
            ExperimentError::PartialResults { source, .. } => source.exit_code(),
            ExperimentError::Config(_)
            | ExperimentError::UnknownUser(_)
            | ExperimentError::Train(TrainError::InvalidHyperparams(_))
            | ExperimentError::Network(NetworkError::InvalidArchitecture(_))
            | ExperimentError::Network(NetworkError::WindowTooShort { .. }) => 1,
            ExperimentError::Train(TrainError::Network(
                NetworkError::InvalidArchitecture(_) | NetworkError::WindowTooShort { .. },
            )) => 1,
            _ => 2,
        }
    }
}
