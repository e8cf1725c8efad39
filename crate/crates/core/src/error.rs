use thiserror::Error;

use nalgebra::DVector;

/// Errors raised by the numerical kernels, controllers and governor.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// The QP solver ran out of iterations. The best iterate is feasible with
    /// respect to the input set and is handed back so callers can decide.
    #[error("QP solver hit the iteration cap ({iterations}) with residual {residual:e}")]
    SolverMaxIterations {
        iterations: usize,
        residual: f64,
        best: DVector<f64>,
    },

    #[error("matrix is not Schur stable (spectral radius {spectral_radius})")]
    Unstable { spectral_radius: f64 },

    #[error("no steady state for reference (residual {residual:e})")]
    InfeasibleReference { residual: f64 },

    #[error("optimal control problem is infeasible: {0}")]
    InfeasibleOcp(String),

    #[error("invariant set is degenerate: center violates or touches `{constraint}`")]
    DegenerateSet { constraint: String },

    #[error("governor initialization infeasible: {0}")]
    InitializationInfeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;
