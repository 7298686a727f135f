use thiserror::Error;

/// Errors raised by the library. Each variant names the module it comes from.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrixcore: dimension mismatch ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },

    #[error("matrixcore: {0}")]
    InvalidMatrix(String),

    #[error("matrixcore: invalid quantum state: {0}")]
    InvalidState(String),

    #[error("matrixcore: numerically null state (trace {0:e} after clipping)")]
    NullState(f64),

    #[error("channels: {0}")]
    Channel(String),

    #[error("channels: unknown outcome label index {index} (alphabet size {size})")]
    UnknownLabel { index: usize, size: usize },

    #[error("channels: Kraus set `{name}` violates stochasticity (residual {residual:e})")]
    NotStochastic { name: String, residual: f64 },

    #[error("environment: {0}")]
    Environment(String),

    #[error("trajectory: numerically null branching at step {step} (total probability {total:e})")]
    NullBranching { step: usize, total: f64 },

    #[error("trajectory: {0}")]
    Trajectory(String),

    #[error("measures: enumeration budget exceeded ({needed} words > {budget})")]
    BudgetExceeded { needed: u128, budget: u128 },

    #[error("measures: quadrature unavailable; use mc")]
    QuadratureUnavailable,

    #[error("measures: {0}")]
    Measure(String),

    #[error("ergodics: stationary state unconverged after {iterations} iterations (residual {residual:e})")]
    Unconverged { iterations: usize, residual: f64 },

    #[error("ergodics: {0}")]
    Ergodics(String),
}

pub type Result<T> = std::result::Result<T, Error>;
