use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the engine.
///
/// Shape mismatches between tensors are programming errors and panic inside
/// the tape; everything a caller can trigger with bad data lands here.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the inputs of an operation was violated.
    #[error("contract violation in {op}: {msg}")]
    Contract { op: &'static str, msg: String },

    /// A numeric domain failure (log of a non-positive value, a zero-norm
    /// vector, a vertex behind the camera, a diverged fit).
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {msg}")]
    Io { path: PathBuf, msg: String },

    #[error("malformed {kind} file {path}: {msg}")]
    Format {
        kind: &'static str,
        path: PathBuf,
        msg: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Contract { op, msg: msg.into() }
    }

    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain { op, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.into(),
            msg: err.to_string(),
        }
    }

    pub(crate) fn format(
        kind: &'static str,
        path: impl Into<PathBuf>,
        msg: impl Into<String>,
    ) -> Self {
        Error::Format {
            kind,
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract { .. } | Error::Config(_) => 2,
            Error::Domain { .. } => 3,
            Error::Io { .. } | Error::Format { .. } => 4,
        }
    }
}

/// Non-fatal conditions recorded while processing (isolated vertices,
/// degenerate UV triangles, empty renders).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warning {
    pub source: &'static str,
    pub message: String,
}

impl Warning {
    pub(crate) fn new(source: &'static str, message: impl Into<String>) -> Self {
        let w = Warning {
            source,
            message: message.into(),
        };
        log::warn!("{}: {}", w.source, w.message);
        w
    }
}
