//! Numerical workbench for positive solutions of `Δu + u^p + f = 0` in `R^n`
//! with supercritical `p`: the radial ground state, the weighted right inverse
//! of `Δ + p w^{p-1}`, and the fixed-point family of solutions.

pub mod constants;
pub mod error;
pub mod fixedpoint;
pub mod fowler;
pub mod linop;
pub mod ode;
pub mod radialgrid;

pub use constants::{classify_regime, derive_exponents, mode_eigenvalue, Exponents, Regime};
pub use error::{Error, Result};
pub use radialgrid::{build_grid, Grid, RadialProfile};
