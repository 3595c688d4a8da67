use thiserror::Error;

/// Errors raised by the solver pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension n = {0} unsupported: need n >= 4")]
    Dimension(u32),
    #[error("subcritical/critical regime unsupported: p = {p} <= (n+2)/(n-2) = {threshold}")]
    Subcritical { p: f64, threshold: f64 },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("profile does not match grid or contains non-finite samples: {0}")]
    InvalidProfile(String),
    #[error("integral not convergent at the {endpoint} endpoint (extension exponent {exponent})")]
    NonIntegrable { endpoint: &'static str, exponent: f64 },
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("Wronskian drift {drift:e} for mode {k} exceeds tolerance")]
    WronskianDrift { k: usize, drift: f64 },
    #[error("Wronskian degenerate for mode {0}")]
    WronskianDegenerate(usize),
    #[error("mode {k} not admissible: {reason}")]
    ModeNotAdmissible { k: usize, reason: String },
    #[error("fixed-point iteration failed: {0}")]
    Solve(crate::fixedpoint::SolveFailure),
}

pub type Result<T> = std::result::Result<T, Error>;
