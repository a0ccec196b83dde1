use thiserror::Error;

use crate::ndgrad::GradError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dataset {index}: {reason}")]
    Dataset { index: usize, reason: String },
    #[error("dataset rejected {rejects} times for class imbalance (cap {cap})")]
    TooManyRejects { rejects: usize, cap: usize },
    #[error("covariance factorization failed even after jitter")]
    Factorization,
    #[error("non-finite gradient at iteration {iteration}, coordinate {coordinate}")]
    NonFiniteGradient { iteration: u64, coordinate: usize },
    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: u64,
        reason: String,
        last_good: Box<crate::metaopt::Checkpoint>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Format(#[from] crate::container::FormatError),
}

pub type Result<T> = std::result::Result<T, Error>;
