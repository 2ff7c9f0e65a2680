//! Random-projection tokenization, masked-token pretraining and music
//! information retrieval probing on top of a small autodiff engine.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod audio;
pub mod config;
pub mod dsp;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod pretrain;
pub mod probing;
pub mod quantizer;
pub mod scalar;
pub mod tensor;
pub mod util;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type ParamStore32 = tensor::ParamStore<f32>;
pub type ParamStore64 = tensor::ParamStore<f64>;
pub type Checkpoint32 = pretrain::Checkpoint<f32>;
pub type Checkpoint64 = pretrain::Checkpoint<f64>;
pub type Probe32 = probing::Probe<f32>;
pub type Probe64 = probing::Probe<f64>;
