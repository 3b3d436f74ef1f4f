use std::path::PathBuf;

use viinit_core::pipeline::StageError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] viinit_core::Error),

    #[error(transparent)]
    Stage(#[from] StageError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn is_numeric(&self) -> bool {
        match self {
            CliError::Core(e) => e.is_numeric(),
            CliError::Stage(e) => e.is_numeric(),
            CliError::Io { .. } | CliError::Usage(_) => false,
        }
    }

    /// 1 for numeric failures, 2 for anything caused by the input.
    pub fn exit_code(&self) -> u8 {
        if self.is_numeric() {
            1
        } else {
            2
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
