//! Pruning neural networks at initialization.
//!
//! The crate is organized bottom-up: a scalar-generic tensor engine with
//! reverse-mode and forward-over-reverse differentiation ([`graph`]), masked
//! fully-connected networks ([`network`]), scoring rules and pruning schedules
//! ([`pruning`]), ablation operators ([`ablations`]), diagnostics
//! ([`analysis`]), SGD training and the pruning protocols built on it
//! ([`training`]), datasets ([`data`]), and the experiment grid runner
//! ([`runner`]).
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the scalar
//! to `f64`, which is what every experiment uses.

pub mod ablations;
pub mod analysis;
pub mod cli;
pub mod data;
pub mod dump;
pub mod error;
pub mod graph;
pub mod network;
pub mod pruning;
pub mod runner;
pub mod scalar;
pub mod seeds;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::{Dual, Scalar};

/// Double-precision tensor.
pub type Tensor = tensor::Tensor<f64>;
/// Single-precision tensor.
pub type TensorF32 = tensor::Tensor<f32>;
/// Double-precision masked network.
pub type Network = network::MaskedNetwork<f64>;
/// Single-precision masked network.
pub type NetworkF32 = network::MaskedNetwork<f32>;
