//! Error type shared by every module.
//!
//! Errors fall into a small number of categories so that the CLI and the C
//! ABI can map them onto stable exit/status codes.

use std::path::PathBuf;

/// Broad failure class; drives CLI exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Numerical,
    Io,
}

impl ErrorCategory {
    /// Process exit code used by the `spsr` binary.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Input => 2,
            ErrorCategory::Numerical => 3,
            ErrorCategory::Io => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("data error in {path} line {line}: {message}")]
    Data {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("cholesky factorization failed for block {block} (tried jitters {jitters:?})")]
    Factorization { block: usize, jitters: Vec<f64> },

    #[error(
        "stochastic gradient solver diverged at iteration {iteration} \
         (residual {residual:.3e}, best {best:.3e}); try a smaller step size"
    )]
    Divergence {
        iteration: usize,
        residual: f64,
        best: f64,
    },

    #[error("negative posterior variance {value:.3e} exceeds tolerance {tolerance:.1e}")]
    NegativeVariance { value: f64, tolerance: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_)
            | Error::Input(_)
            | Error::DimensionMismatch { .. }
            | Error::Format { .. }
            | Error::Parse { .. }
            | Error::Data { .. } => ErrorCategory::Input,
            Error::Factorization { .. }
            | Error::Divergence { .. }
            | Error::NegativeVariance { .. }
            | Error::Numerical(_) => ErrorCategory::Numerical,
            Error::Io { .. } => ErrorCategory::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
