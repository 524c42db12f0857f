//! Class-incremental continual learning with proxy-based contrastive training
//! and a confidence-variance replay buffer.
//!
//! The numeric core ([`tensor`], [`autodiff`], [`model`]) is generic over
//! [`scalar::Scalar`] (`f32` or `f64`); everything downstream runs in `f64`.

pub mod autodiff;
pub mod buffer;
pub mod cli;
pub mod confidence;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};

pub type ClassId = usize;
pub type TaskId = usize;
pub type SampleId = u64;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
