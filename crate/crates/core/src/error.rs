use std::fmt;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which part of the objective produced a non-finite value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTerm {
    Data,
    Pde,
    Gradient,
}

impl fmt::Display for LossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossTerm::Data => "data loss",
            LossTerm::Pde => "pde loss",
            LossTerm::Gradient => "parameter gradient",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid room: {0}")]
    InvalidRoom(String),

    #[error("room too absorbent for Sabine inversion (alpha = {alpha:.4})")]
    TooAbsorbent { alpha: f64 },

    #[error("evaluation point coincides with a source (r = {distance:e} m)")]
    CoincidentSource { distance: f64 },

    #[error("invalid dataset request: {0}")]
    InvalidDataset(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("nonpositive magnitude measurement ({0})")]
    NonpositiveMagnitude(f64),

    #[error("predicted magnitude must be positive, got {0}")]
    NonpositivePrediction(f64),

    #[error("magnitude net diverged (log-magnitude {0})")]
    MagnitudeDiverged(f64),

    #[error("non-finite {term} at iteration {iteration:?}")]
    NonFinite {
        term: LossTerm,
        iteration: Option<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl fmt::Display) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    /// True for failures caused by numerics rather than inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::MagnitudeDiverged(_) | Error::CoincidentSource { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Format { .. })
    }
}
