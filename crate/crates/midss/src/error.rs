use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible grid dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid configuration or argument value.
    #[error("invalid config: {0}")]
    Config(String),

    /// Malformed input file.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    /// A numerical invariant was violated (non-finite value, excessive
    /// imaginary residue, ...).
    #[error("numerical integrity: {0}")]
    NumericalIntegrity(String),

    /// A loss term or update produced a non-finite value; `term` names the
    /// offending component.
    #[error("training integrity in term `{term}`: {msg}")]
    TrainingIntegrity { term: String, msg: String },

    /// Backward called with a cache from an outdated forward pass.
    #[error("stale activation cache: parameters changed since forward")]
    StaleCache,

    /// Checkpoint architecture does not match the requested configuration.
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    /// I/O failure, annotated with the path involved.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for front-ends: 1 for integrity failures,
    /// 2 for usage/config/input problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericalIntegrity(_)
            | Error::TrainingIntegrity { .. }
            | Error::StaleCache => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
