use thiserror::Error;

/// Errors shared by all solver modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("density mass {mass} deviates from 1 by more than {tol}")]
    NormalizationError { mass: f64, tol: f64 },

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("quantile support [{lo}, {hi}] escapes the domain [-{half_width}, {half_width}]")]
    DomainOverflow { lo: f64, hi: f64, half_width: f64 },

    #[error("quantile resolutions differ: {left} vs {right}")]
    ResolutionMismatch { left: usize, right: usize },

    #[error("grids differ: {0}")]
    GridMismatch(String),

    #[error("fixed-point iteration did not converge in {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("inner minimization stalled (gradient norm {grad_norm:.3e} > tolerance {tol:.3e})")]
    InnerStall {
        grad_norm: f64,
        tol: f64,
        /// Last iterate, so callers can inspect where the descent got stuck.
        last_iterate: Vec<f64>,
    },

    #[error("CFL violation: dt = {dt:.3e} exceeds the advective limit {limit:.3e} (try dt <= {limit:.3e})")]
    CflViolation { dt: f64, limit: f64 },

    #[error("finite-difference step went unstable at t = {t}: min u = {min_u:.3e}")]
    Instability { t: f64, min_u: f64 },

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("convexity lost: measured lambda_eps = {lambda_eps:.3e} <= 0 (coupling too strong)")]
    ConvexityLost { lambda_eps: f64 },
}
