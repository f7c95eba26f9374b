use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("could not parse {path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] pernode_core::Error),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("no usable records found under {0}")]
    EmptyReport(PathBuf),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for failed checks or runtime failures, 2 for bad configuration or
    /// unusable paths, 3 for a report with nothing to report.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Toml { .. } | Self::Io { .. } => 2,
            Self::Core(pernode_core::Error::Config(_)) => 2,
            Self::Core(_) | Self::Verification(_) => 1,
            Self::EmptyReport(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
