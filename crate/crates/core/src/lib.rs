//! Neural decision trees.
//!
//! A hard-routed binary tree whose internal nodes are small condition
//! networks and whose leaves are neural classifiers, trained end to end.
//! Routing is discrete in forward; condition networks learn through a
//! smooth surrogate of the branch indicator.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod cli;
pub mod data;
pub mod error;
pub mod gate;
pub mod infogain;
pub mod layer;
pub mod loss;
pub mod model_io;
pub mod optim;
pub mod routing;
pub mod scalar;
pub mod selftest;
pub mod tensor;
pub mod tree;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use tree::{NdtModel, NetDims, TrainConfig};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = NdtModel<f32>;
pub type Model64 = NdtModel<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Batch32 = routing::Batch<f32>;
pub type Batch64 = routing::Batch<f64>;
