//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A power split cannot carry the requested message at the configured
    /// code rate (the SD denominator `P_k/t' - interference` is not positive).
    #[error("infeasible allocation: message {k} cannot be decoded at code rate {code_rate} bit/s")]
    InfeasibleAllocation { k: usize, code_rate: f64 },

    /// Code-rate calibration could not bracket or reach the target.
    #[error("code-rate calibration failed: {0}")]
    Calibration(String),

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed IDX payload or any other dataset parse failure.
    #[error("dataset parse error: {0}")]
    Parse(String),

    /// A training loss became NaN or infinite.
    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    /// Configuration text failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed checkpoint stream.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
