use std::path::PathBuf;

use thiserror::Error;

use crate::io::matrix_market::MatrixMarketError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("triangular factor has an exact zero on its diagonal at index {index}")]
    SingularTriangular { index: usize },

    #[error(
        "core matrix R has an exact zero diagonal entry at index {index}; \
         use the stabilized method (sgn) or enable the fallback"
    )]
    SingularCore { index: usize },

    #[error("input is not symmetric: ||A - A^T||_F = {asym:e} exceeds {tol:e}")]
    NotSymmetric { asym: f64, tol: f64 },

    #[error("{what} of {requested} entries exceeds the cap of {cap}")]
    CapExceeded {
        what: &'static str,
        requested: usize,
        cap: usize,
    },

    #[error("SVD did not converge after {sweeps} sweeps")]
    NonConvergence { sweeps: usize },

    #[error("operation {op} is not supported for method {method}")]
    Unsupported { op: &'static str, method: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    MatrixMarket(#[from] MatrixMarketError),

    #[error("container {path}: {reason}")]
    Container { path: PathBuf, reason: String },

    #[error("container {path}: format version {found} is not supported (expected {expected})")]
    ContainerVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn dims(
        op: &'static str,
        expected: impl Into<String>,
        got: impl Into<String>,
    ) -> Self {
        Error::DimensionMismatch {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by inconsistent shapes or violated matrix
    /// preconditions (as opposed to I/O or argument errors).
    pub fn is_dimension_error(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::NotSymmetric { .. }
                | Error::CapExceeded { .. }
        )
    }

    pub fn is_io_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::MatrixMarket(_)
                | Error::Container { .. }
                | Error::ContainerVersion { .. }
                | Error::Serialization(_)
        )
    }
}
