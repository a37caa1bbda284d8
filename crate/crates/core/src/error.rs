//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, data handling and fitting.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or argument violates its domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A data row failed to parse or validate.
    #[error("row {row}: {message}")]
    Data { row: usize, message: String },

    /// A quantity that must be strictly positive collapsed to zero
    /// (e.g. all component masses on a truncation window).
    #[error("degenerate truncation window: {0}")]
    DegenerateWindow(String),

    /// A posterior or likelihood denominator vanished for an observation.
    #[error("observation {index}: {message}")]
    ZeroMass { index: usize, message: String },

    /// An implicit-equation solve found no root in its bracket.
    #[error("no root in bracket [{lo}, {hi}] for {what}")]
    NoRoot {
        what: &'static str,
        lo: f64,
        hi: f64,
    },

    /// An iterative procedure exhausted its iteration budget.
    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
    },

    /// Anything else numerical (overflow, log of nonpositive mass, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// I/O failure while reading or writing artifacts.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
