use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("tensor dimension {dim} exceeds the limit {limit}; use the sampling estimators instead")]
    TensorTooLarge { dim: usize, limit: usize },

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("chain rejected: {0}")]
    ChainRejected(String),

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
