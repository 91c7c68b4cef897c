use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by the command-line driver for exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Io,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate triangle {face}: area {area:e} m^2")]
    DegenerateFace { face: usize, area: f64 },

    #[error("non-manifold edge ({0}, {1})")]
    NonManifold(usize, usize),

    #[error("{0}")]
    Empty(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{path}: {msg}")]
    Schema { path: String, msg: String },

    #[error("unsupported image: {0}")]
    Image(String),

    #[error("linear solve failed: relative residual {residual:e}, condition estimate {condition:e}")]
    Solver { residual: f64, condition: f64 },

    #[error("simulation failed at step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("Monte Carlo sample {index} failed: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("training aborted at epoch {epoch}: {source}")]
    Epoch {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn schema(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } | Error::Image(_) | Error::Parse { .. } => ErrorCategory::Io,
            Error::InvalidArgument(_)
            | Error::Schema { .. }
            | Error::Json(_)
            | Error::LengthMismatch { .. }
            | Error::Empty(_) => ErrorCategory::Config,
            Error::DegenerateFace { .. }
            | Error::NonManifold(..)
            | Error::Solver { .. }
            | Error::Diverged { .. }
            | Error::NonFinite(_) => ErrorCategory::Numerical,
            Error::Step { source, .. }
            | Error::Sample { source, .. }
            | Error::Epoch { source, .. } => source.category(),
        }
    }
}
