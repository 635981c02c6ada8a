use std::io;

use thiserror::Error;

/// Everything that can go wrong inside the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset unusable: {0}")]
    Dataset(String),

    #[error("physically inconsistent input: {0}")]
    Physics(String),

    #[error("no traffic: {0}")]
    NoTraffic(String),

    #[error("episode contract violated: {0}")]
    Episode(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("non-finite value at index {index} in {context}")]
    NonFinite { context: String, index: usize },

    #[error("search space too large: {size} terminal assignments exceeds guard {limit}")]
    SearchTooLarge { size: u128, limit: u128 },

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
