use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] punet::Error),

    #[error("config {path}: {source}")]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("gradient check failed: {0}")]
    Gradcheck(String),
}

impl CliError {
    /// 2 for configuration and contract errors, 3 for numeric failures, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        use punet::Error as E;
        match self {
            CliError::Core(E::Numeric(_)) | CliError::Gradcheck(_) => 3,
            CliError::Core(E::Io { .. } | E::Format { .. }) => 4,
            CliError::Core(_) | CliError::ConfigFile { .. } => 2,
        }
    }
}
