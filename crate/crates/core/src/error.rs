use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate clouds: mean cost is zero, supply epsilon explicitly")]
    DegenerateCost,

    #[error("row {row} of the coupling has zero mass and cannot be renormalized")]
    ZeroRow { row: usize },

    #[error("sinkhorn did not converge: marginal error {marginal_error:.3e} after {iterations} iterations")]
    NotConverged { iterations: usize, marginal_error: f64 },

    #[error("numerical breakdown: {0}")]
    Numerical(String),

    #[error("no candidate scale converged: {0}")]
    NoCandidate(String),

    #[error("problem too large for the exact oracle: n*m = {entries} exceeds {limit}")]
    OracleTooLarge { entries: usize, limit: usize },

    #[error("oracle certificate failed: {0}")]
    Certificate(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
