use thiserror::Error;

use crate::dynamics::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("operator is not Hermitian: max |A_ij - conj(A_ji)| = {asymmetry:.3e}")]
    NotHermitian { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("positivity violation: eigenvalue {eigenvalue:.3e}")]
    PositivityViolation { eigenvalue: f64 },

    #[error(
        "degenerate constraints at `{operator}` (covariance condition number {condition:.3e})"
    )]
    DegenerateConstraints { operator: String, condition: f64 },

    #[error("scale functional sigma evaluated to {value}, expected a finite value >= 0")]
    InvalidSigma { value: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "multiplier consistency violated: (gamma|theta) = {gamma_theta:.3e}, (gamma|H|theta) = {h_theta:.3e}"
    )]
    Orthogonality { gamma_theta: f64, h_theta: f64 },

    #[error("energy {energy} outside the support range [{min}, {max}]")]
    InfeasibleEnergy { energy: f64, min: f64, max: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported model combination: {0}")]
    Unsupported(String),

    #[error("integration failed at t = {t} (step {step:.3e})")]
    IntegrationFailure {
        t: f64,
        step: f64,
        /// Samples recorded before the failure, when available.
        partial: Option<Box<Trajectory>>,
    },
}
