use std::io;
use std::path::PathBuf;

use sfae_autodiff::TensorError;
use thiserror::Error;

use crate::train::CheckpointError;



#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("PGM parse error at byte {offset}: {msg}")]
    Pgm { offset: usize, msg: String },

    #[error("unsupported PGM depth: maxval {found}, expected {expected}")]
    UnsupportedDepth { found: u32, expected: u32 },

    #[error("metadata: missing required key `{0}`")]
    MissingKey(String),

    #[error("metadata: bad value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },

    #[error("invalid Bayer frame: {0}")]
    Frame(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("spectrum is already {0}")]
    SpectrumState(&'static str),

    #[error("non-finite activation in {stage}: {detail}")]
    NonFinite { stage: &'static str, detail: String },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("training diverged at step {step}: {cause}")]
    Diverged { step: u64, cause: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
