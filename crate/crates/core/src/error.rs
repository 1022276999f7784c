use std::path::PathBuf;

use thiserror::Error;

/// Every failure the toolkit can report.
///
/// Variants are grouped into coarse classes (see [`ErrorClass`]) so the
/// command-line front end can map them onto stable exit codes.
#[derive(Debug, Error)]
pub enum MlozError {
    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("cubic spline needs at least 4 source levels, got {0}")]
    SplineInfeasible(usize),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{path}: bad magic (expected {expected:?})")]
    BadMagic { path: PathBuf, expected: String },

    #[error("{path}: checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    Checksum { path: PathBuf, stored: u64, computed: u64 },

    #[error("{path}: dimension mismatch: {message}")]
    Dimension { path: PathBuf, message: String },

    #[error("{path}: non-positive standard deviation at flat index {index}")]
    NonPositiveStd { path: PathBuf, index: usize },

    #[error("{path}: invalid contents: {message}")]
    InvalidFile { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("usage: {0}")]
    Usage(String),
}

/// Coarse error classes, one per process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Config,
    Data,
    Numeric,
    Io,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 2,
            ErrorClass::Config => 3,
            ErrorClass::Data => 4,
            ErrorClass::Numeric => 5,
            ErrorClass::Io => 6,
        }
    }
}

impl MlozError {
    pub fn class(&self) -> ErrorClass {
        match self {
            MlozError::Usage(_) => ErrorClass::Usage,
            MlozError::Config { .. } => ErrorClass::Config,
            MlozError::Numeric(_) | MlozError::SplineInfeasible(_) => ErrorClass::Numeric,
            MlozError::Io { .. } => ErrorClass::Io,
            MlozError::Structural(_)
            | MlozError::InsufficientData(_)
            | MlozError::Input(_)
            | MlozError::BadMagic { .. }
            | MlozError::Checksum { .. }
            | MlozError::Dimension { .. }
            | MlozError::NonPositiveStd { .. }
            | MlozError::InvalidFile { .. } => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MlozError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        MlozError::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MlozError>;
