//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! The engine is deliberately small: exactly the operations a convolutional
//! encoder/decoder, a locally-linear transition network and a differentiable
//! log-determinant constraint need, plus the Adam optimizer. Everything is
//! 64-bit, single-threaded per tape, and deterministic.

mod adam;
mod error;
pub mod gradcheck;
pub mod kernels;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{AdError, Result};
pub use params::{ParameterStore, TapeParams};
pub use tape::{Gradients, Tape, VarId};
pub use tensor::Tensor;
