use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_ANALYSIS: u8 = 4;
pub const EXIT_IO: u8 = 5;
pub const EXIT_MISMATCH: u8 = 6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("analysis failed: {0}")]
    Analysis(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("replay differs: {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Analysis(_) => EXIT_ANALYSIS,
            CliError::Io { .. } => EXIT_IO,
            CliError::Mismatch(_) => EXIT_MISMATCH,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}
