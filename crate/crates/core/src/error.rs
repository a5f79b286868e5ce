use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("sequence of length {len} is shorter than the window length {k}")]
    TooShort { len: usize, k: usize },

    #[error("mask has no available samples")]
    EmptyMask,

    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(&'static str),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("solver diverged on window {window}")]
    SolverDiverged { window: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format { offset, msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
