//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: {detail}")]
    ShapeMismatch { layer: usize, detail: String },

    #[error("unknown builtin network `{0}`")]
    UnknownNetwork(String),

    #[error("invalid network description: {0}")]
    InvalidNetwork(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("plan infeasible at layer {layer}: {detail}")]
    Infeasible { layer: usize, detail: String },

    #[error("plan does not match network: {0}")]
    PlanMismatch(String),

    #[error("simulator invariant violated at step {step}: {detail}")]
    SimViolation { step: usize, detail: String },

    #[error("mask does not match network: {0}")]
    MaskMismatch(String),

    #[error("malformed file: {0}")]
    MalformedFile(String),

    #[error("invalid energy table: {0}")]
    InvalidEnergyTable(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
