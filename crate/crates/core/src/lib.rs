//! Conditional speed GAN for multi-agent trajectory generation.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors and a reverse-mode differentiation tape
//! - [`nn`]: linear layers, MLP stacks, LSTM cells and Adam
//! - [`data`]: trajectory ingestion, scene windowing, features, speed folds
//!   and a synthetic scene generator
//! - [`model`]: the conditional generator and discriminator
//! - [`train`]: alternating adversarial optimisation and checkpoints
//! - [`eval`]: ADE/FDE, best-of-K, collision rate, speed compliance
//! - [`exec`]: data-parallel fan-out across scenes (rayon, optional)

pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use exec::Execution;
