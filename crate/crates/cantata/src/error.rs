//! Error type shared across the crate.
//!
//! Every error carries a stable machine-readable category (see
//! [`Error::category`]); the CLI prints `category: message` on stderr so
//! scripts can branch on the category without parsing prose.

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller-supplied data violated a precondition (empty score, bad sample
    /// rate, out-of-range timestep, unknown phoneme, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two tensors/sequences that must agree in shape did not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Configuration file or field rejected.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint file malformed, truncated, or failed its checksum.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Checkpoint version tag does not match this build.
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),

    /// Non-finite value where the math requires finite ones (NaN loss,
    /// NaN in a sampler step).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Stable category token for the CLI's machine-readable stderr line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "corrupt-checkpoint",
            Error::VersionMismatch(_) => "version-mismatch",
            Error::Numerical(_) => "numerical",
            Error::Io(_) => "io",
            Error::Tensor(_) => "tensor",
            Error::Serde(_) => "serialization",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for `Error::InvalidInput` with formatted text.
#[macro_export]
macro_rules! invalid_input {
    ($($arg:tt)*) => {
        $crate::Error::InvalidInput(format!($($arg)*))
    };
}

/// Shorthand for `Error::ShapeMismatch` with formatted text.
#[macro_export]
macro_rules! shape_mismatch {
    ($($arg:tt)*) => {
        $crate::Error::ShapeMismatch(format!($($arg)*))
    };
}
