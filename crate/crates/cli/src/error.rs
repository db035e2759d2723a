use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] adacrit_core::Error),

    #[error("every grid cell diverged: {0}")]
    AllDiverged(String),

    #[error("malformed trace file {path}: {reason}")]
    Trace { path: PathBuf, reason: String },
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 1 for bad input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Core(adacrit_core::Error::InvalidParameter { .. })
            | HarnessError::Core(adacrit_core::Error::Metadata(_)) => 1,
            _ => 2,
        }
    }
}
