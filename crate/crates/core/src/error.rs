use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("memory store is empty")]
    EmptyMemory,

    #[error("similarity scores sum to {0:e}, too close to zero to normalize")]
    DegenerateScores(f64),

    #[error("unknown label {0}")]
    Label(u32),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("synthetic task spec: {0}")]
    Spec(String),

    #[error("gradient descent diverged at step {step} (loss {loss:e})")]
    Divergence { step: usize, loss: f64 },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("format error at line {line}: {message}")]
    CsvFormat { line: u64, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}
