use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("index {index} out of range for size {size}")]
    Index { index: usize, size: usize },

    #[error("sequence of {needed} positions exceeds model capacity of {capacity}")]
    Capacity { needed: usize, capacity: usize },

    #[error("no positions contribute to the loss")]
    EmptyLoss,

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("grammar validation failed in production {production}: {msg}")]
    Grammar { production: String, msg: String },

    #[error("incompatible base model: expected digest {expected}, found {found}")]
    Compatibility { expected: String, found: String },

    #[error("rate undefined: {0}")]
    UndefinedRate(String),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}
