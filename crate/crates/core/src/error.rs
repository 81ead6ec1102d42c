use thiserror::Error;

/// Errors produced by the numerical routines of this crate.
#[derive(Debug, Error)]
pub enum DsmError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is singular to working precision (pivot {pivot} at column {column})")]
    SingularMatrix { column: usize, pivot: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step size collapsed to {h:e} at t = {t}")]
    StepSizeCollapse { t: f64, h: f64 },

    #[error("maximum number of steps ({steps}) exceeded at t = {t}")]
    MaxStepsExceeded { steps: usize, t: f64 },

    #[error("trajectory left the ball: |u(t) - u0| = {dist} > {limit} at t = {t}")]
    BallEscape { t: f64, dist: f64, limit: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("Riccati solution blew up at t = {t}: g = {g:e} exceeds {limit:e}")]
    BlowUp { t: f64, g: f64, limit: f64 },

    #[error("adaptive quadrature failed to converge on [{a}, {b}]")]
    QuadratureFailure { a: f64, b: f64 },

    #[error("no finite stopping time: delta = {delta:e} exceeds eps(0)^2 / (16 M) = {max_delta:e}")]
    NoFiniteStop { delta: f64, max_delta: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = DsmError> = std::result::Result<T, E>;
