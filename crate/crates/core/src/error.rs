//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the segmentation stack.
///
/// The CLI maps these onto process exit codes: validation and configuration
/// problems exit with 2, training divergence with 3, everything else with 1.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid caller-supplied data (bad record field, shape mismatch, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// An internal invariant was breached; indicates a bug, not bad input.
    #[error("internal error: {0}")]
    Internal(String),

    /// Training produced a non-finite loss.
    #[error("divergence at step {step}: loss became non-finite")]
    Divergence { step: u64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }

    /// Exit code the CLI uses for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Input(_) | Error::Config(_) | Error::Json(_) => 2,
            Error::Divergence { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
