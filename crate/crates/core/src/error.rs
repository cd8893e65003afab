//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Contract violations
//! (bad shapes, empty batches, misuse of immutable buffers) are reported as
//! errors rather than panics so callers such as the experiment CLI can turn
//! them into exit codes.

/// Unified error for the whole crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration is internally inconsistent or refers to unknown keys.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Filesystem failure while reading or writing run artifacts.
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    /// A data file exists but its contents do not match the expected layout.
    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    /// Training produced a non-finite loss; the run was aborted after
    /// writing a diagnostic dump.
    #[error("run diverged: {0}")]
    Diverged(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
