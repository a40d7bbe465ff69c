//! Sample-weighted adversarial domain adaptation for cross-user activity
//! recognition.
//!
//! All numeric code is generic over [`Scalar`] (`f32` for training runs,
//! `f64` for gradient oracles). The aliases below name the two concrete
//! instantiations.

pub mod autodiff;
pub mod data;
pub mod evaluation;
pub mod experiment;
mod domain;
pub mod networks;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use autodiff::{AutodiffError, Graph, NodeId, ParamNodes};
pub use domain::Domain;
pub use networks::{Architecture, NetworkBundle};
pub use scalar::{Precision, Scalar};
pub use tensor::{ParameterSet, Tensor, TensorError};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type NetworkBundle32 = NetworkBundle<f32>;
pub type NetworkBundle64 = NetworkBundle<f64>;
