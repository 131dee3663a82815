use thiserror::Error;

use crate::dataset::Location;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: row {row}: {msg}")]
    Parse { path: String, row: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("duplicate location {0}")]
    DuplicateLocation(Location),

    #[error("{model} missing {location}")]
    MissingPrediction { model: String, location: Location },

    #[error("invalid distribution parameters: {0}")]
    InvalidDistribution(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cholesky failed for model {model} (jitter escalated to {jitter:e})")]
    Cholesky { model: usize, jitter: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("non-finite gradient at theta = {theta:?}")]
    NonFiniteGradient { theta: Vec<f64> },

    #[error("sampler stuck: {0}")]
    SamplerStuck(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Parse {
            path: String::new(),
            row,
            msg: e.to_string(),
        }
    }
}
