//! Jointly learned image classification and per-image preprocessing.
//!
//! An agent with a dueling Q-network acts over a hybrid action space of k
//! stop actions (classify now) and n transformation actions (flip/rotate the
//! image and look again). The numerical core is generic over the scalar type:
//! f32 for training, f64 for gradient-check suites.

pub mod error;
pub mod scalar;
pub mod tensor;

pub mod agent;
pub mod config;
pub mod data;
pub mod env;
pub mod nn;
pub mod pipeline;
pub mod transforms;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Default training scalar.
pub type Real = f32;
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
