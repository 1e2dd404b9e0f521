use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("unstable Euler step: step * lambda_max^2 / (mn) = {0} (must be < 0.1)")]
    UnstableStep(f64),

    #[error("zero singular value at mode {0}")]
    ZeroSingularValue(usize),

    #[error("bound hypothesis violated: C / sqrt(n) = {0} >= 1")]
    HypothesisViolated(f64),

    #[error("quadrature did not converge (estimated error {0:e})")]
    QuadratureDiverged(f64),

    #[error("no label recorded for the queried point")]
    UnknownPoint,

    #[error("{0}")]
    Empty(&'static str),

    #[error("IDX format error in {path}: {reason}")]
    Idx { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
