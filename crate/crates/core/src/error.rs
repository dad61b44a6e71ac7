use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or table.
    #[error("configuration error: {0}")]
    Config(String),

    /// An input outside the domain where a formula is valid.
    #[error("domain error: {0}")]
    Domain(String),

    /// Operation invoked in a state or mode it does not support.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    /// Self-consistent dead-time filtering failed to settle. `trace` holds
    /// the observed-rate iterates in counts/second.
    #[error("fixed point did not converge after {} iterations (rate trace: {trace:?})", trace.len())]
    NonConvergence { trace: Vec<f64> },

    #[error("degenerate attack: {0}")]
    DegenerateAttack(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
