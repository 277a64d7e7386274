use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("too few samples: got {got}, need at least {min}")]
    TooFewSamples { got: usize, min: usize },

    #[error("grid mismatch: expected {expected} samples, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("graph leaves the tubular neighbourhood: sup|u| = {sup_u:.6e}, limit = {limit:.6e}")]
    GraphOverflow { sup_u: f64, limit: f64 },

    #[error("solution blew up: {0}")]
    Blowup(String),

    #[error("self-intersection detected at t = {t:.6}")]
    SelfIntersection { t: f64 },

    #[error("linearization is singular: smallest singular value {min_singular:.3e}")]
    SingularLinearization { min_singular: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("bracket [{lo}, {hi}] does not contain a sign change of the closure defect")]
    BracketFailure { lo: f64, hi: f64 },

    #[error("ODE step size underflow at s = {s:.6}")]
    StiffOde { s: f64 },

    #[error("invalid replay window: log argument {0} is not positive")]
    InvalidWindow(f64),

    #[error("requested time {t} lies outside the stored range [{lo}, {hi}]")]
    RangeError { t: f64, lo: f64, hi: f64 },

    #[error("hypothesis fails at sample {index}: {detail}")]
    HypothesisFail { index: usize, detail: String },

    #[error("trajectory is not graphical on the requested window")]
    NotGraphical,

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
