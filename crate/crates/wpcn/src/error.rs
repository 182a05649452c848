//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by analytic evaluations, samplers, and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated the documented domain of an operation.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The beamforming solver exhausted its iteration budget. The best
    /// iterate found so far and its optimality gap are attached so callers
    /// can still inspect or reuse the partial solution.
    #[error("solver did not converge within {iterations} iterations (objective {objective:.6e}, duality gap {gap:.3e})")]
    SolverStalled {
        /// Best feasible precoder found before stalling.
        precoder: Box<crate::wet::Precoder>,
        /// Achieved min incident power of `precoder`.
        objective: f64,
        /// Upper-bound certificate minus achieved objective.
        gap: f64,
        /// Iterations spent.
        iterations: usize,
    },

    /// A fixed-point iteration failed to settle. Theoretically precluded for
    /// the pilot-count map (its iteration function is a contraction), so this
    /// indicates pathological inputs.
    #[error("fixed-point iteration did not converge within {0} iterations")]
    FixedPointDiverged(usize),

    /// Configuration file could not be read or parsed.
    #[error("config error: {0}")]
    Config(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
