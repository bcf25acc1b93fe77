use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: {message}")]
    Dimension { op: &'static str, message: String },

    #[error("{0}: empty set")]
    EmptySet(&'static str),

    #[error("label error: {0}")]
    Label(String),

    /// A caller-side precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A record failed an invariant check. `location` pins down frame/actor.
    #[error("validation error in clip {clip}{location}: {message}")]
    Validation {
        clip: String,
        location: String,
        message: String,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("diff error: {0}")]
    Diff(String),

    #[error("stale diff: {0}")]
    Stale(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Coarse error category, used by front ends to choose exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Validation,
    Data,
    Internal,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Validation { .. }
            | Error::Label(_)
            | Error::Diff(_)
            | Error::Stale(_)
            | Error::EmptySet(_) => ErrorKind::Validation,
            Error::Parse { .. } | Error::Io { .. } | Error::Checkpoint(_) => ErrorKind::Data,
            Error::Shape { .. } | Error::Dimension { .. } | Error::Contract(_) => {
                ErrorKind::Internal
            }
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn dim(op: &'static str, message: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
