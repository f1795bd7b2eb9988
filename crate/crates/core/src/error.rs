use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the numerical routines and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("column {0} is zero; its angle is undefined")]
    ZeroColumn(usize),

    #[error("SVD did not converge after {sweeps} sweeps (off-diagonal ratio {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("training diverged at step {step}: loss {loss:e} exceeds {limit:e}")]
    Diverged { step: usize, loss: f64, limit: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed document: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err($crate::Error::Precondition(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
