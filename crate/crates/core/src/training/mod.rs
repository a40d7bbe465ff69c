//! The three-phase training step: classification update, meta update of the
//! weight allocator through a simulated alignment step, and weighted
//! adversarial alignment.

mod closed_form;
mod losses;
mod optim;
mod step;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::AutodiffError;
use crate::networks::NetworkError;
use crate::tensor::TensorError;

pub use closed_form::meta_gradient_closed_form;
pub use losses::{
    assign_pseudo_labels, classification_loss, meta_classification_loss, normalize_group, normalize_weights,
    normalize_weights_graph, pseudo_labels_from_probs, weighted_domain_alignment_loss, PseudoLabelSet, SampleWeights,
};
pub use optim::{cosine_lr, optimizer_step, sgd_step, AdamState, Direction};
pub use step::{
    build_alignment_graph, meta_objective, run_training, sample_minibatch, simulated_alignment_step, training_step, weights_from_eta,
    AlignmentGraph, MiniBatchPair, StepLog, StepOutcome, TrainState,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no gradient matching parameter `{0}`")]
    GradientMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training already ran all {0} steps")]
    Finished(usize),
}

impl TrainError {
    /// Whether the failure is a NaN/inf blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            TrainError::NonFinite(_) | TrainError::Autodiff(AutodiffError::NonFinite { .. }) => true,
            TrainError::Network(NetworkError::Autodiff(AutodiffError::NonFinite { .. })) => true,
            _ => false,
        }
    }
}

/// Training variants: the full method, the DANN baseline, and the three
/// ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SwlAdapt,
    Dann,
    /// Allocator sees only the domain discrimination loss.
    SwlD,
    /// Allocator sees only the classification loss.
    SwlC,
    /// Learned weights for source samples, uniform for target samples.
    SwlS,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::SwlAdapt, Method::Dann, Method::SwlD, Method::SwlC, Method::SwlS];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::SwlAdapt => "swl-adapt",
            Method::Dann => "dann",
            Method::SwlD => "swl-d",
            Method::SwlC => "swl-c",
            Method::SwlS => "swl-s",
        }
    }

    pub fn uses_allocator(self) -> bool {
        self != Method::Dann
    }

    pub fn allocator_inputs(self) -> usize {
        match self {
            Method::SwlD | Method::SwlC => 1,
            _ => 2,
        }
    }

    /// Whether selected pseudo-labeled target samples enter the
    /// classification loss.
    pub fn uses_pseudo_labels(self) -> bool {
        self != Method::Dann
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown method `{s}` (expected one of swl-adapt, dann, swl-d, swl-c, swl-s)"))
    }
}

/// Update rule for the allocator parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaOptimizer {
    #[default]
    Adam,
    /// Plain gradient descent, matching the closed-form meta-gradient.
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Per-domain mini-batch size.
    pub batch_size: usize,
    pub total_steps: usize,
    /// Allocator learning rate.
    pub alpha: f64,
    /// Learning rate of the other three subnetworks.
    pub beta: f64,
    /// Pseudo-label confidence threshold.
    pub rho: f64,
    /// Denominator guard used when a domain's allocator outputs sum to zero.
    pub tau: f64,
    pub grl_lambda: f64,
    pub meta_optimizer: MetaOptimizer,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            batch_size: 128,
            total_steps: 1000,
            alpha: 1e-3,
            beta: 1e-3,
            rho: 0.7,
            tau: 1.0,
            grl_lambda: 1.0,
            meta_optimizer: MetaOptimizer::Adam,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::InvalidHyperparams(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.total_steps == 0 {
            return fail("total_steps must be at least 1");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return fail("rho must lie in (0, 1)");
        }
        if !(self.tau > 0.0) {
            return fail("tau must be positive");
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return fail("alpha and beta must be positive");
        }
        if !(self.grl_lambda > 0.0) {
            return fail("grl_lambda must be positive");
        }
        Ok(())
    }
}
