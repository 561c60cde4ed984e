use std::path::PathBuf;

/// Errors raised across the simulator, policy and trainer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is out of range.
    #[error("invalid configuration for `{param}`: {reason}")]
    Config { param: String, reason: String },

    /// A config file contains a key nobody reads.
    #[error("unknown config key `{key}`{}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownKey {
        key: String,
        suggestion: Option<String>,
    },

    #[error("{what} {id} not found")]
    NotFound { what: &'static str, id: usize },

    #[error("invalid search probe: {0}")]
    InvalidProbe(String),

    /// A structural invariant (shape, vocabulary, ordering) was violated.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("episode aborted: {0}")]
    EpisodeAbort(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(param: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            param: param.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
