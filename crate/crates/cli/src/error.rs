use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] scout_core::Error),
    #[error("cannot read config {path}: {source}")]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {reason}")]
    BadTable { path: PathBuf, reason: String },
    #[error("cannot align runs: {0}")]
    Alignment(String),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    /// Process exit status: 2 for configuration problems, 3 for everything
    /// that fails at run time.
    pub fn exit_code(&self) -> i32 {
        use scout_core::Error as E;
        match self {
            CliError::ConfigFile { .. } => 2,
            CliError::Core(E::Config { .. } | E::UnknownKey { .. } | E::Parse { .. }) => 2,
            _ => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
