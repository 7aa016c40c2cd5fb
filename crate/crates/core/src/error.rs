use thiserror::Error;

/// Errors raised across the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("size limit exceeded: {0}")]
    Size(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Iteration budget exhausted. `trace` holds the per-iteration distances
    /// so callers can inspect the contraction behaviour.
    #[error("no convergence after {iterations} iterations: {message}")]
    Convergence { iterations: usize, message: String, trace: Vec<f64> },
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Scenario(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
