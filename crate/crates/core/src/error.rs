use thiserror::Error;

/// Errors raised by the linear algebra, subproblem and outer solver layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e}, tolerance {tolerance:e})")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("symmetric eigensolver failed: {0}")]
    EigSolverFailure(String),

    #[error("shifted matrix is singular or indefinite (lambda_min + tau = {shifted_min:e})")]
    SingularShift { shifted_min: f64 },

    #[error(
        "cubic subproblem root search failed after {iterations} iterations (phi = {residual:e})"
    )]
    RootFindFailure { iterations: usize, residual: f64 },

    #[error("no Lipschitz constant known and no regularization parameter given")]
    NoLipschitzConstant,

    #[error("adaptive regularization diverged (M = {value:e} exceeds {cap:e})")]
    AdaptiveDivergence { value: f64, cap: f64 },

    #[error("gradient-regularized steps require a convex objective")]
    NotConvex,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("trace has no completed phase")]
    EmptyTrace,

    #[error("instance parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
