//! Error type shared by every module in the crate.

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum FaaError {
    /// Tensor shapes do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration value is out of its legal range or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// Input is structurally valid but degenerate for the operation
    /// (zero-norm row, empty modality, no opposite-label candidates, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// An API contract was violated (e.g. gradient check of a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A serialized artifact has the wrong magic, version or layout.
    #[error("format error: {0}")]
    Format(String),

    /// A serialized artifact is structurally inconsistent or truncated.
    #[error("corrupt data: {0}")]
    Corruption(String),

    /// Training produced a non-finite loss; carries the failing location.
    #[error("non-finite loss at epoch {epoch}, batch {batch}: ms={l_ms}, ce={l_ce}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        l_ms: f64,
        l_ce: f64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FaaError>;
