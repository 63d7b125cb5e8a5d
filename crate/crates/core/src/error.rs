use std::io;

use thiserror::Error;

/// Errors raised by the spectral, flow and classification routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Input contains NaN or infinite values.
    #[error("data integrity: {0}")]
    DataIntegrity(String),

    /// Two inputs that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration or hyper-parameters.
    #[error("invalid config: {0}")]
    Config(String),

    /// The masked region retained fewer than two patches.
    #[error("region too small: {kept} patch(es) retained, at least 2 required")]
    TooSmallRegion { kept: usize },

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    /// Malformed file contents.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
