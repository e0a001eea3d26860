use thiserror::Error;

/// Errors produced by the core library.
///
/// Every variant except [`CoreError::Numerical`] describes input that was
/// rejected before any computation ran; `Numerical` means a computation
/// started from valid input and failed (non-convergence, overflow, drift
/// bound violation).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("pgm: {0}")]
    Pgm(#[from] PgmError),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Errors specific to the PGM (P5) reader/writer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PgmError {
    #[error("directory not found: {0}")]
    MissingDirectory(String),

    #[error("directory contains no .pgm files: {0}")]
    EmptyDirectory(String),

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: String, reason: String },

    #[error("mixed dimensions: {path} is {got}, expected {expected}")]
    MixedDimensions {
        path: String,
        got: String,
        expected: String,
    },

    #[error("truncated pixel data in {0}")]
    TruncatedData(String),

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

impl CoreError {
    /// True for errors caused by rejected input rather than a failed
    /// computation. Callers use this to pick an exit class.
    pub fn is_rejected_input(&self) -> bool {
        !matches!(self, CoreError::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
