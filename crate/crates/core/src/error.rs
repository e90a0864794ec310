use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Structurally invalid parameters (bad `n`, `d`, `lambda`, grids, ...).
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// Malformed expression, rule or configuration text.
    #[error("parse error: {0}")]
    Parse(String),

    /// Experiment configuration is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A fluctuation experiment was asked to run under a regime that does
    /// not match the measured diagnostics.
    #[error("regime gate: {0}")]
    RegimeGate(String),

    /// Brute-force generator state space exceeds the documented cap.
    #[error("state space too large: {0}")]
    StateSpace(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
