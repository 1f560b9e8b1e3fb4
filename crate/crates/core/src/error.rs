use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid norm: {0}")]
    InvalidNorm(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gradient of the norm is undefined at the origin")]
    ZeroVector,

    #[error("{what} did not converge after {iterations} iterations (last error {last_error:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        last_error: f64,
    },

    #[error("grid too small: every axis needs at least 3 nodes, got shape {0:?}")]
    GridTooSmall(Vec<usize>),

    #[error("no interior nodes left after excluding a margin of {0} cells")]
    EmptyInterior(usize),

    #[error("region exits the field domain: {0}")]
    OutsideDomain(String),

    #[error("newton iteration diverged after {iterations} iterations (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("singular jacobian at pivot {pivot} (newton iteration {iteration})")]
    SingularJacobian {
        pivot: usize,
        iteration: usize,
        /// The iterate at which the factorization broke down.
        iterate: Vec<f64>,
    },

    #[error("unresolved concentration: grid spacing {h:e} exceeds delta/8 = {limit:e} at lambda = {lambda:e}; use the analytic family instead")]
    UnresolvedConcentration { h: f64, limit: f64, lambda: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Whether the error comes from bad input rather than a numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::InvalidNorm(_)
                | Error::InvalidArgument(_)
                | Error::ZeroVector
                | Error::GridTooSmall(_)
                | Error::EmptyInterior(_)
                | Error::OutsideDomain(_)
                | Error::Json(_)
                | Error::Parse(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
