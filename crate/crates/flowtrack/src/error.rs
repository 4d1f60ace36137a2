//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by parsing, validation and inference.
#[derive(Debug, Error)]
pub enum Error {
    /// Underlying I/O failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed content in a text file.
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    /// Rejected configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Violated precondition on caller-supplied data.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The descriptor model carries no weights for this frame gap.
    #[error("no weights trained for frame gap {delta_t}")]
    UntrainedDelta { delta_t: usize },

    /// Two artifacts disagree on the descriptor grid resolution.
    #[error("grid size mismatch: expected {expected}, found {found}")]
    GridMismatch { expected: usize, found: usize },

    /// A color histogram was requested over a box containing no pixels.
    #[error("histogram over a box containing no image pixels")]
    EmptyHistogram,

    /// Exact inference on a component would exceed the table budget.
    #[error("exact inference needs {required} table entries, budget is {budget}")]
    SolverBudget { required: u128, budget: u128 },
}

/// Convenience alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Wraps an I/O error with the path that produced it.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Builds a parse error for `path` at 1-based `line`.
    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }
}
