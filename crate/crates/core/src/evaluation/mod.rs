//! Test-split metrics, domain discrepancy, significance tests, allocator
//! surfaces and convergence traces.

mod a_distance;
mod convergence;
mod metrics;
mod stats;
mod surface;

use crate::autodiff::AutodiffError;
use crate::networks::NetworkError;
use crate::tensor::TensorError;
use crate::training::TrainError;

pub use a_distance::{
    a_distance_from_error, proxy_a_distance, proxy_a_distance_with, ProbeSettings, MIN_SAMPLES_PER_DOMAIN,
};
pub use convergence::{
    mean_cross_entropy, probe_weights, ConvergenceTrace, ConvergenceTracker, ProbeSet, TraceRecord, WeightChange,
    PROBES_PER_DOMAIN,
};
pub use metrics::{accuracy, macro_f1, per_class_scores, ClassScores, MetricsReport};
pub use stats::{mean_std, paired_t_test, TTestResult};
pub use surface::{allocator_row, export_weight_surface, SurfaceBounds, SurfacePoint, WeightSurfaceGrid};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("label {label} is not below {n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("{what}: {n} samples, need at least {min}")]
    TooFewSamples { what: &'static str, n: usize, min: usize },
    #[error("resolution must be positive, got {0}")]
    InvalidResolution(usize),
    #[error("invalid grid bounds {0}")]
    InvalidBounds(String),
    #[error("write failed: {0}")]
    Io(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
