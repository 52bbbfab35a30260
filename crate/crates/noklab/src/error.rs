use std::path::PathBuf;

/// Errors from file handling, configuration and the command line.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// CSV problem; `row` and `col` are 1-based.
    #[error("{}:{row}:{col}: {msg}", path.display())]
    Csv { path: PathBuf, row: usize, col: usize, msg: String },
    /// JSON problem; `line` and `column` are 1-based.
    #[error("{}:{line}:{column}: {msg}", path.display())]
    Json { path: PathBuf, line: usize, column: usize, msg: String },
    #[error(transparent)]
    Core(#[from] noklab_core::Error),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
