use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs that do not fit together (mismatched dimensions, bad config values).
    #[error("configuration error: {0}")]
    Config(String),
    /// Caller violated an operation's precondition.
    #[error("usage error: {0}")]
    Usage(String),
    /// A structure failed validation while being built or loaded.
    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },
    /// Non-finite values appeared in an iterate.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Policy parameters diverged and the step-size fallback was exhausted.
    #[error("diverged at iteration {iter}: {msg}")]
    Divergence { iter: usize, msg: String },
    #[error("internal error: {0}")]
    Internal(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
