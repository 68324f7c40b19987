use std::path::PathBuf;

/// Errors raised by the estimation stack.
///
/// Variants are grouped so a caller can map them onto a small set of exit
/// codes: configuration problems, bad input data, and estimation failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{file}:{line}: column `{column}`: {message}")]
    Parse {
        file: PathBuf,
        line: u64,
        column: String,
        message: String,
    },

    #[error("{0}")]
    Data(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// Coarse class of the error, used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Parse { .. } | Error::Data(_) | Error::Io { .. } | Error::Csv { .. } => {
                ErrorKind::Data
            }
            Error::Validation(_) | Error::Estimation(_) => ErrorKind::Estimation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Estimation,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
