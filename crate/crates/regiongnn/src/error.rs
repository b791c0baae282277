use std::path::{Path, PathBuf};

/// Errors of the file-format and pipeline layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] regiongnn_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing input file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{0}")]
    Config(String),
}

impl Error {
    /// Short machine-readable class used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(regiongnn_core::Error::Config(_)) | Error::Config(_) => "config",
            Error::Core(_) => "compute",
            Error::Io { .. } => "io",
            Error::MissingFile(_) => "missing-file",
            Error::Format { .. } => "format",
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    pub(crate) fn format(path: &Path, message: impl std::fmt::Display) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
