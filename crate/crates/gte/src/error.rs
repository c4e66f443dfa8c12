use std::path::{Path, PathBuf};

/// Errors from files and formats.
#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: integrity check failed: {message}")]
    Integrity { path: PathBuf, message: String },
    #[error("unknown image id {0:?}")]
    UnknownImage(String),
    #[error("{path}: {source}")]
    Core {
        path: PathBuf,
        #[source]
        source: gte_core::Error,
    },
    #[error(transparent)]
    Model(#[from] gte_core::Error),
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn integrity(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Integrity {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub(crate) fn parse(path: &Path, line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}
