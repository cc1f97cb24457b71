use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum SbiError {
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("density unavailable for model kind `{0}` (quantile-only model)")]
    UnsupportedDensity(&'static str),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("no convergence after {iterations} iterations (last gradient norm {grad_norm:.3e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },
    #[error("bandwidth too small: evaluation point {index} receives zero total kernel weight; increase h")]
    Bandwidth { index: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SbiError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(SbiError::Domain(msg.into()))
}
