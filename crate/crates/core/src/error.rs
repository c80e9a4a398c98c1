use std::io;

use thiserror::Error;

use crate::surrogate::SurrogateParams;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("duplicate token string {0:?}")]
    DuplicateToken(String),

    #[error("could not reach minimum pairwise gap {gap} after {attempts} resamples")]
    GapInfeasible { gap: f64, attempts: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("prior protocol error: {0}")]
    Protocol(String),

    #[error("prior provider timed out after {0} ms")]
    Timeout(u64),

    #[error("decode aborted at step {step}: {source}")]
    Aborted {
        step: usize,
        #[source]
        source: Box<Error>,
        /// Surrogate estimates for the steps that completed before the failure.
        trajectory: Vec<SurrogateParams>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
