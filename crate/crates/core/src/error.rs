use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform.
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A value lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An API was called in a state where it is not valid.
    #[error("usage error: {0}")]
    Usage(String),

    /// Data does not match the declared sensor or feature schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Invalid configuration; `violations` lists every failed constraint.
    #[error("config error: {}", violations.join("; "))]
    Config { violations: Vec<String> },

    /// Malformed configuration file line.
    #[error("{}:{line}: {key}: {msg}", file.display())]
    ConfigParse {
        file: PathBuf,
        line: usize,
        key: String,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("archive error: {0}")]
    Archive(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
