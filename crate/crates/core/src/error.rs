use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("length error: {0}")]
    Length(String),

    #[error("step error: {0}")]
    Step(String),

    /// A NaN or infinity showed up in a forward or backward pass.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("sampling failed at step {step}: {msg}")]
    Sampling { step: usize, msg: String },

    #[error("training failed at epoch {epoch}, step {step}: {msg}")]
    Training {
        epoch: usize,
        step: usize,
        msg: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    /// Checkpoint and run configuration disagree on a structural field.
    #[error("config mismatch on `{key}`: checkpoint has {checkpoint}, run config has {run}")]
    ConfigMismatch {
        key: String,
        checkpoint: String,
        run: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("plot input error: {0}")]
    Plot(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
