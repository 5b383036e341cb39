use thiserror::Error;

/// Errors produced by the kobmetric library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point lies outside the domain (defining value {0:.3e})")]
    OutsideDomain(f64),
    #[error("point is not on the boundary (defining value {0:.3e})")]
    NotOnBoundary(f64),
    #[error("defining-function gradient vanishes at the boundary point")]
    DegenerateGradient,
    #[error("parameter {0} is not inside the unit disc")]
    OutsideUnitDisc(f64),
    #[error("disc degree {degree} exceeds the configured maximum {max}")]
    DegreeOverflow { degree: usize, max: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("no feasible disc found: {0}")]
    NoFeasibleDisc(String),
    #[error("endpoint residual {0:.3e} above tolerance")]
    EndpointResidual(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
