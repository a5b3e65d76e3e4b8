use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the lab.
///
/// Configuration problems and runtime task failures are kept apart so the CLI
/// can map them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("prompt too long: trajectory of {n} states with skip {p} yields {len} > max {l_max}")]
    PromptTooLong {
        n: usize,
        p: usize,
        len: usize,
        l_max: usize,
    },

    #[error("planning failed: {0}")]
    Planning(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error in {what}: {msg}")]
    Parse { what: String, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn parse(what: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs or configuration rather than
    /// a failed task execution.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::Config(_)
                | Error::PromptTooLong { .. }
                | Error::Parse { .. }
                | Error::Io { .. }
                | Error::Unsupported(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
