use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{}:{line}: {message}", path.display())]
    File {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("no such directory: {}", .0.display())]
    MissingDir(PathBuf),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{0}")]
    Contract(String),
}

impl KittiError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Self::Parse {
            line,
            message: message.into(),
        }
    }

    /// Attaches a file path to a bare parse error.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Self::Parse { line, message } => Self::File {
                path: path.into(),
                line,
                message,
            },
            other => other,
        }
    }
}

pub type Result<T, E = KittiError> = std::result::Result<T, E>;
