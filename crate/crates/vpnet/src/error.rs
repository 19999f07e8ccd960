//! Crate-wide error type. Every fallible operation returns [`Result`]; loading
//! and parsing never panic on malformed input.

use thiserror::Error;

/// Errors produced by basis construction, VP operators, the layer stack,
/// training, data generation, and file I/O.
#[derive(Error, Debug)]
pub enum Error {
    /// A value or combination of values violates an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two objects that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A non-finite number (NaN or infinity) appeared where finite input is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A gradient became non-finite during iterative optimization.
    #[error("non-finite gradient at iteration {step}")]
    NonFiniteGradient { step: usize },

    /// The training loss became NaN; training stops early and the partial
    /// report is flagged as diverged.
    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    /// An API contract was violated (e.g. backward called without a cached
    /// forward pass).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Filesystem-level failure.
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file content; carries the file and (1-based) line or row
    /// location when known.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// A checkpoint was written by an incompatible format version.
    #[error("unsupported checkpoint version `{found}` (supported: {supported})")]
    UnsupportedVersion { found: String, supported: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Helper for wrapping `std::io::Error` with the offending path.
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Helper for building a parse error with location info.
    pub fn parse(path: &std::path::Path, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }
}
