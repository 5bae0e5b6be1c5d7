//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the tensor VAR engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or parameter violations detected at an operation boundary.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A conditional update produced a non-positive-definite precision or a
    /// similar breakdown; carries the sweep index when known.
    #[error("numerical failure at sweep {sweep}: {message}")]
    NumericalFailure { sweep: usize, message: String },

    /// The simulation DGP failed to produce a stationary system.
    #[error("scenario infeasible: {0} consecutive non-stationary draws")]
    ScenarioInfeasible(usize),

    /// Malformed input data (CSV panels, spec tables, chain files).
    #[error("data error: {0}")]
    Data(String),

    /// Configuration rejected before any work started.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numerical(sweep: usize, msg: impl Into<String>) -> Self {
        Error::NumericalFailure {
            sweep,
            message: msg.into(),
        }
    }
}
