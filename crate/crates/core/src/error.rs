//! Error types shared across the crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// A configuration value violates a construction-time invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data is malformed (bad CSV, non-increasing timestamps, NaNs, ...).
    #[error("invalid data: {0}")]
    Data(String),

    /// A numerical routine failed to converge or produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The rejection sampler exceeded its attempt cap. Acceptance probability
    /// is bounded away from zero, so hitting the cap signals a violated
    /// envelope, i.e. an implementation bug rather than bad luck.
    #[error("rejection sampler exceeded {attempts} attempts (dim {dim}); envelope likely violated")]
    SamplerCap { attempts: u64, dim: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
