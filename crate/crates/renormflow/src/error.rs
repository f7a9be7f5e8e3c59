//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible grids")]
    GridMismatch,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("multiplier not real-symmetric")]
    AsymmetricMultiplier,

    #[error("insufficient scales")]
    InsufficientScales,

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("truncation loss at (i={i}, m={m}): coefficient F^({j},{mj}) is non-zero but not carried")]
    TruncationLoss { i: usize, m: usize, j: usize, mj: usize },

    #[error("missing coefficient {0}")]
    MissingCoefficient(String),

    #[error("missing counterterm c[{0}]")]
    MissingCounterterm(usize),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("malformed dump: {0}")]
    MalformedDump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
