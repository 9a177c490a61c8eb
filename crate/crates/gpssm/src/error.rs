//! Error type shared across the crate.

use std::fmt;
use std::io;
use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, GpssmError>;

#[derive(Debug)]
pub enum GpssmError {
    /// File could not be read or written.
    Io { path: PathBuf, source: io::Error },
    /// A persisted artifact failed to parse; `line` is 1-based.
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    /// A dataset with zero rows where at least one is required.
    EmptyDataset,
    /// Vector/matrix sizes disagree with the configured dimensions.
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    /// A NaN or infinity showed up where finite values are required.
    NonFinite { context: String },
    /// Invalid configuration or precondition violation.
    InvalidConfig(String),
    /// Cholesky factorization failed for the given state dimension.
    CholeskyFailure { dim: usize },
    /// Training loss became non-finite at the given epoch (0-based).
    TrainingDiverged { epoch: usize },
}

impl fmt::Display for GpssmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GpssmError::Io { path, source } => {
                write!(f, "io error on {}: {}", path.display(), source)
            }
            GpssmError::Parse {
                path,
                line,
                message,
            } => write!(f, "{}:{}: {}", path.display(), line, message),
            GpssmError::EmptyDataset => write!(f, "empty dataset"),
            GpssmError::DimensionMismatch {
                context,
                expected,
                found,
            } => write!(
                f,
                "dimension mismatch in {}: expected {}, found {}",
                context, expected, found
            ),
            GpssmError::NonFinite { context } => {
                write!(f, "non-finite value in {}", context)
            }
            GpssmError::InvalidConfig(msg) => write!(f, "invalid configuration: {}", msg),
            GpssmError::CholeskyFailure { dim } => write!(
                f,
                "Cholesky factorization failed for state dimension {}",
                dim
            ),
            GpssmError::TrainingDiverged { epoch } => {
                write!(f, "training diverged (non-finite loss) at epoch {}", epoch)
            }
        }
    }
}

impl std::error::Error for GpssmError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            GpssmError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl GpssmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        GpssmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        GpssmError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
