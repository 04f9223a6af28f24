use thiserror::Error;

/// Error type shared by all toolkit modules.
#[derive(Debug, Error)]
pub enum KzqError {
    #[error("invalid site pair ({i}, {j}): {reason}")]
    InvalidPair { i: usize, j: usize, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("Hilbert-space dimension {dim} exceeds cap {cap}")]
    SizeCap { dim: usize, cap: usize },

    #[error("solver did not converge: {0}")]
    Convergence(String),

    #[error("truncation weight {weight:.3e} exceeded abort threshold at step {step}")]
    TruncationBlowup { weight: f64, step: usize },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("calibration failed; final excitation per candidate detuning: {0:?}")]
    Calibration(Vec<(f64, f64)>),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("linear algebra error: {0}")]
    Linalg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KzqError>;
