use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Population reached the top of the Fock truncation, where the engine
    /// can no longer represent the dynamics faithfully.
    #[error("truncation leak: population {population:.3e} at Fock level {level} ({context})")]
    TruncationLeak {
        level: usize,
        population: f64,
        context: &'static str,
    },

    /// The post-selected branch has (numerically) zero probability.
    #[error("zero-probability outcome: P = {0:.3e} is below the floor")]
    ZeroProbability(f64),

    #[error("integration quality: trace drifted by {drift:.3e} after {steps} steps")]
    IntegrationQuality { drift: f64, steps: usize },

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("internal consistency: {0}")]
    Internal(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
