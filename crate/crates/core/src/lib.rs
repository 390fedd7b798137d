//! Continual representation learning benchmark.
//!
//! Trains encoders over Task-IL, Class-IL and Data-IL task sequences with
//! supervised (cross-entropy, supervised contrastive) and self-supervised
//! (momentum contrast) objectives, then scores the *encoder* rather than the
//! continually trained classifier: a fresh output layer is fit on a small
//! class-balanced evaluation memory with the encoder frozen, and the encoder
//! is fine-tuned on held-out downstream tasks.

pub mod algorithms;
pub mod data;
pub mod error;
pub mod eval;
pub mod harness;
pub mod memory;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
