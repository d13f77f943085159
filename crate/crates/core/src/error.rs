use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An integrand or one of its derivatives was evaluated at the origin.
    #[error("integrand evaluated at the zero vector")]
    ZeroVector,
    #[error("invalid integrand: {0}")]
    InvalidIntegrand(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("Newton system is not positive definite (pivot {pivot} at row {row})")]
    SingularHessian { row: usize, pivot: f64 },
    #[error("degenerate wall facet {0}")]
    DegenerateFacet(usize),
    #[error("solve did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status: 2 for bad input, 3 for a failed solve.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotConverged { .. } | Error::SingularHessian { .. } | Error::ZeroVector | Error::DegenerateFacet(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
