use thiserror::Error;

/// Errors raised by the engine. Each variant names the contract that was violated.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid exponent: {0}")]
    InvalidExponent(String),
    #[error("perturbation order rho = {rho} must exceed beta = {beta}")]
    OrderTooLow { rho: f64, beta: f64 },
    #[error("compensated drift must vanish for rho <= 1 (max |value| = {max_abs:.3e})")]
    CompensatedDriftNonzero { max_abs: f64 },
    #[error("bound violated: {0}")]
    BoundViolated(String),
    #[error("series contraction violated: estimate {estimate:.4} >= 1 at step {step}")]
    SeriesContraction { estimate: f64, step: f64 },
    #[error("Dyson-Phillips series did not converge within {max_order} terms (last term norm {last_norm:.3e})")]
    NonConvergent { max_order: usize, last_norm: f64 },
    #[error("matrix residual {residual:.3e} exceeds residual_tol {tol:.3e}; reduce step or raise time_nodes")]
    ResidualTooLarge { residual: f64, tol: f64 },
    #[error("Neumann series diverges at lambda = {lambda} (ratio {ratio:.4}); try a larger lambda")]
    NeumannDivergence { lambda: f64, ratio: f64 },
    #[error("uniform bound violated by sequence member {index}: {detail}")]
    UniformBound { index: usize, detail: String },
    #[error("simulation produced a non-finite state on path {path} at step {step}")]
    NonFinitePath { path: usize, step: usize },
    #[error("zero standard error")]
    ZeroStdErr,
}

pub type Result<T> = std::result::Result<T, Error>;
