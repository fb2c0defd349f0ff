//! Denoising and forecasting of multi-sensor structural vibration records
//! with a convolution, recurrence and attention network.
//!
//! The numeric core ([`tensor`], [`layers`], [`train`]) is generic over
//! [`Scalar`]; the aliases below fix the precision used in practice.

pub mod dataprep;
pub mod eval;
pub mod layers;
pub mod scalar;
pub mod series;
pub mod signal;
pub mod tensor;
pub mod train;

pub use scalar::Scalar;

/// Double-precision tensor, used for training and gradient checks.
pub type Tensor64 = tensor::Tensor<f64>;
/// Single-precision tensor, the checkpoint storage precision.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type Network64 = layers::Network<f64>;
pub type Network32 = layers::Network<f32>;
