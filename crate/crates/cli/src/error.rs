use std::io;
use std::path::PathBuf;

use dfr_core::CoreError;
use dfr_kitti::KittiError;
use thiserror::Error;

use crate::checkpoint::CheckpointError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("config key `{key}`: {message}")]
    BadValue { key: String, message: String },

    #[error("{}: {message}", path.display())]
    ConfigFile { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Kitti(#[from] KittiError),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("output encoding failed: {0}")]
    Encode(String),

    #[error("gradient check failed for: {}", .0.join(", "))]
    GradcheckFailed(Vec<String>),
}

impl CliError {
    /// 2 for bad invocations and configuration, 3 for malformed input files,
    /// 1 for everything that fails while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::UnknownKey(_) | Self::BadValue { .. } | Self::ConfigFile { .. } | Self::Usage(_) => 2,
            Self::Kitti(KittiError::MissingDir(_)) => 2,
            Self::Kitti(KittiError::File { .. } | KittiError::Parse { .. }) => 3,
            Self::Core(CoreError::Config(_)) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
