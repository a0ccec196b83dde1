//! Meta-learned online learning: an LSTM-cell learner stores the parameters
//! of a small MLP in its cell state and rewrites them after every sample.
//!
//! Modules, bottom-up:
//!
//! - [`ndgrad`]: reverse-mode differentiation over dense `f64` tensors
//! - [`model`]: the one-hidden-layer MLP and its flat parameter layout
//! - [`learner`]: FC stack and input/forget/candidate gates over the cell state
//! - [`episode`]: predict-then-update unrolling and the two objectives
//! - [`datagen`]: hierarchical synthetic XOR tasks
//! - [`metaopt`]: SMORMS3 meta-training and checkpoints
//! - [`baselines`]: regularized logistic regression and suite scoring

pub mod baselines;
pub mod container;
pub mod datagen;
pub mod episode;
pub mod error;
pub mod learner;
pub mod metaopt;
pub mod model;
pub mod ndgrad;
pub mod rng;

pub use error::{Error, Result};
