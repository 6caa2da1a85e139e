use std::path::PathBuf;

use crate::ecoc::CodingMatrix;

/// Errors raised by the factorization pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("constraint set is empty (phase-1 violation {violation:.3e})")]
    Infeasible { violation: f64 },

    #[error("row {row}: correction policy is infeasible for the current factor")]
    InfeasibleRow { row: usize },

    #[error("row {row}: solver hit its iteration cap (kkt residual {residual:.3e})")]
    SolverStalled { row: usize, residual: f64 },

    #[error("distance matrix has constant off-diagonal entries; cannot normalize")]
    ConstantDistances,

    #[error("coding matrix rows {0} and {1} are identical")]
    DuplicateRows(usize, usize),

    #[error("no coding matrix with minimum distance {target} found in {attempts} attempts (best {best_distance})")]
    CodingSearchFailed {
        target: usize,
        attempts: usize,
        best_distance: usize,
        best: Box<CodingMatrix>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Role { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
