//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by tensors, training, data handling and the experiment
/// harness. Variants map onto the distinct failure classes callers are
/// expected to branch on (usage vs. runtime in the CLI, failed runs in the
/// grid).
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or batch shapes do not conform; the message carries both shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A configuration value is invalid before any work starts.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called outside its contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values were produced where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A dataset could not be loaded or is unusable.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// A scenario could not be sampled from the available pools.
    #[error("scenario error: {0}")]
    Scenario(String),

    /// Summary tables reference result cells that are absent or incomplete.
    #[error("summary error: {0}")]
    Summary(String),

    /// A statistical test was given too few usable observations.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
