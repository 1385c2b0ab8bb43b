use std::path::PathBuf;

use thiserror::Error;

/// Every failure a command can report, grouped by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("arity error: {0}")]
    Arity(String),

    #[error(transparent)]
    Core(#[from] sosest::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// 2 config, 3 arity, 4 I/O, 5 degenerate input under `--strict`.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Arity(_) => 3,
            CliError::Core(sosest::Error::Arity { .. }) => 3,
            CliError::Core(_) => 2,
            CliError::Io { .. } | CliError::Format { .. } => 4,
            CliError::Degenerate(_) => 5,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
