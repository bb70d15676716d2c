use std::path::PathBuf;

use thiserror::Error;
use timegci_nd::NdError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numeric(#[from] NdError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("value {value} at step {step}, feature {feature} lies outside the open unit interval")]
    Boundary { step: usize, feature: usize, value: f64 },

    #[error("history already holds {0} steps; cannot advance past the horizon")]
    HorizonExceeded(usize),

    #[error("normalizer has not been fitted")]
    UnfittedNormalizer,

    #[error("{loss} loss became non-finite at step {step}")]
    NonFiniteLoss { loss: &'static str, step: u64 },

    #[error("critic loss diverged ({value:.3e}) at step {step}")]
    Diverged { value: f64, step: u64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
