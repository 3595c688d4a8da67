//! The solution family: rescaled source, nonlinear remainder, Picard iteration
//! of `φ ↦ T(N(φ) - f_λ)` in the ball `‖φ‖_* <= ρ`, and a posteriori checks.
//!
//! Everything is solved in the blown-up variable `y = λ x`, where the profile
//! `U = w + φ` satisfies `ΔU + U^p + f_λ = 0`. The solution of the original
//! problem is `u_λ(x) = λ^m U(λ x)`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::constants::Exponents;
use crate::error::{Error, Result};
use crate::fowler::GroundState;
use crate::linop::{
    profile_starstar_norm, smooth_step, smooth_step_derivative, star_norm, starstar_norm_parts, ModeExpansion,
    NormParts, RightInverse, WeightedNormConfig,
};
use crate::radialgrid::{mode_laplacian, Grid, RadialProfile};

use std::sync::Arc;

/// Below this `|φ/w|` the remainder uses its Taylor series.
const SERIES_THRESHOLD: f64 = 1e-3;
/// Consecutive ratios `>= 1` that count as non-contraction.
const NON_CONTRACTION_STREAK: usize = 3;

/// `f = Σ_k a_k η(r) r^{-μ} Θ_k` with `η` rising smoothly from 0 to 1 on `[R₁, R₁ + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceSpec {
    pub mu: f64,
    pub r1: f64,
    pub modes: BTreeMap<usize, f64>,
}

impl SourceSpec {
    /// The single mode-0 source `η(r) r^{-μ}`.
    pub fn radial(mu: f64, r1: f64) -> Self {
        Self { mu, r1, modes: BTreeMap::from([(0, 1.0)]) }
    }

    pub fn validate(&self, e: &Exponents) -> Result<()> {
        if !(self.mu > 2.0 + e.m) || !self.mu.is_finite() {
            return Err(Error::InvalidParameter {
                name: "mu",
                reason: format!("need mu > 2 + 2/(p-1) = {}, got {}", 2.0 + e.m, self.mu),
            });
        }
        if !(self.r1 > 0.0) || !self.r1.is_finite() {
            return Err(Error::InvalidParameter { name: "r1", reason: format!("need r1 > 0, got {}", self.r1) });
        }
        if self.modes.values().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParameter { name: "modes", reason: "non-finite amplitude".into() });
        }
        // f >= 0: the radial part has to dominate everything else
        let a0 = self.modes.get(&0).copied().unwrap_or(0.0);
        let rest: f64 = self.modes.iter().filter(|(k, _)| **k > 0).map(|(_, a)| a.abs()).sum();
        if a0 < 0.0 || rest > a0 {
            return Err(Error::InvalidParameter {
                name: "modes",
                reason: format!("source must be nonnegative: mode-0 amplitude {a0} vs {rest} in higher modes"),
            });
        }
        Ok(())
    }

    pub fn kmax(&self) -> usize {
        self.modes.keys().next_back().copied().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.modes.values().all(|a| *a == 0.0)
    }

    /// `η(r) r^{-μ}` and its derivative.
    pub fn profile(&self, r: f64) -> (f64, f64) {
        let x = r - self.r1;
        let eta = smooth_step(x);
        let deta = smooth_step_derivative(x);
        let pw = r.powf(-self.mu);
        (eta * pw, deta * pw - self.mu * eta * pw / r)
    }

    /// `R₁^{-(μ-2-σ)} + λ^{μ-2-m}`, the bound on `‖f_λ‖_**`.
    pub fn starstar_bound(&self, e: &Exponents, lambda: f64) -> f64 {
        self.r1.powf(-(self.mu - 2.0 - e.sigma)) + lambda.powf(self.mu - 2.0 - e.m)
    }

    /// The same bound with `+(μ-2-σ)` as the `R₁` exponent, kept for comparison.
    pub fn starstar_bound_positive_r1(&self, e: &Exponents, lambda: f64) -> f64 {
        self.r1.powf(self.mu - 2.0 - e.sigma) + lambda.powf(self.mu - 2.0 - e.m)
    }
}

/// Parameters of one solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveConfig {
    pub lambda: f64,
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub symmetric: bool,
    pub kmax: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { lambda: 0.05, rho: 0.1, tol: 1e-10, max_iter: 50, symmetric: false, kmax: 0 }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter { name: "lambda", reason: format!("need lambda > 0, got {}", self.lambda) });
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter { name: "rho", reason: format!("need 0 < rho < 1, got {}", self.rho) });
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidParameter { name: "tol", reason: format!("need tol > 0, got {}", self.tol) });
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter { name: "max_iter", reason: "need at least one iteration".into() });
        }
        Ok(())
    }
}

/// `f_λ(r) = λ^{-2-m} f(r/λ)` mode by mode on `g`.
pub fn rescaled_source(src: &SourceSpec, e: &Exponents, lambda: f64, g: &Arc<Grid>) -> Result<ModeExpansion> {
    src.validate(e)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter { name: "lambda", reason: format!("need lambda > 0, got {lambda}") });
    }
    let support = lambda * src.r1;
    if g.r_min() > support / std::f64::consts::E {
        return Err(Error::InvalidGrid(format!(
            "grid starts at r = {} but the source switches on at r = {support}",
            g.r_min()
        )));
    }
    let scale = lambda.powf(-2.0 - e.m);
    let base = RadialProfile::from_fn(g.clone(), |r| {
        let (f, df) = src.profile(r / lambda);
        (scale * f, scale * df / lambda)
    })?
    .with_exponents(0.0, -src.mu);
    let mut out = ModeExpansion::new(e.n, src.kmax(), g.clone());
    for (k, a) in &src.modes {
        out.insert(*k, base.scaled(*a))?;
    }
    Ok(out)
}

/// `(1+t)_+^p - 1 - p t`, by series when `|t|` is small.
fn remainder_kernel(p: f64, t: f64) -> f64 {
    if t.abs() < SERIES_THRESHOLD {
        let c2 = p * (p - 1.0) / 2.0;
        let c3 = c2 * (p - 2.0) / 3.0;
        let c4 = c3 * (p - 3.0) / 4.0;
        let c5 = c4 * (p - 4.0) / 5.0;
        t * t * (c2 + t * (c3 + t * (c4 + t * c5)))
    } else {
        (1.0 + t).max(0.0).powf(p) - 1.0 - p * t
    }
}

/// `N(φ) = -(w+φ)_+^p + w^p + p w^{p-1} φ`.
///
/// Mode 0 is exact. Higher modes keep only the part linear in `φ_k` about
/// `w + φ_0`, i.e. `-p ((w+φ_0)_+^{p-1} - w^{p-1}) φ_k`; products of two
/// nonradial modes are dropped.
pub fn nonlinear_remainder(gs: &GroundState, phi: &ModeExpansion) -> Result<ModeExpansion> {
    let g = gs.grid();
    if !phi.grid().same_as(g) {
        return Err(Error::InvalidProfile("phi and ground state live on different grids".into()));
    }
    let p = gs.exponents.p;
    let w = gs.w();
    let phi0 = phi.coefficient(0);
    let mut out = ModeExpansion::new(phi.n(), phi.kmax(), g.clone());
    for (k, pk) in phi.modes() {
        let values: Vec<f64> = if k == 0 {
            (0..g.count()).map(|i| -w[i].powf(p) * remainder_kernel(p, pk.values()[i] / w[i])).collect()
        } else {
            (0..g.count())
                .map(|i| {
                    let u = (w[i] + phi0.values()[i]).max(0.0);
                    -p * (u.powf(p - 1.0) - w[i].powf(p - 1.0)) * pk.values()[i]
                })
                .collect()
        };
        out.insert(k, RadialProfile::from_values(g.clone(), values)?)?;
    }
    Ok(out)
}

/// `ħ(φ) = T(N(φ) - f_λ)`.
pub fn hbar(t: &RightInverse<'_>, f: &ModeExpansion, phi: &ModeExpansion) -> Result<ModeExpansion> {
    let rhs = nonlinear_remainder(t.ground_state(), phi)?.combine(1.0, f, -1.0)?;
    t.apply(&rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolveFailure {
    /// `NON_CONTRACTION_STREAK` consecutive increments failed to shrink.
    NonContraction { iteration: usize, ratio: f64 },
    LeftBall { iteration: usize, norm: f64 },
    MaxIterations { iterations: usize, increment: f64 },
}

impl std::fmt::Display for SolveFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolveFailure::NonContraction { iteration, ratio } => {
                write!(f, "non-contraction at iteration {iteration} (ratio {ratio:.4})")
            }
            SolveFailure::LeftBall { iteration, norm } => {
                write!(f, "left contraction ball at iteration {iteration} (‖φ‖_* = {norm:.4e})")
            }
            SolveFailure::MaxIterations { iterations, increment } => {
                write!(f, "no convergence after {iterations} iterations (last increment {increment:.3e})")
            }
        }
    }
}

/// Outcome of the iteration; `phi` is the last iterate whether or not it converged.
#[derive(Debug, Clone)]
pub struct SolveRun {
    pub phi: ModeExpansion,
    pub iterations: usize,
    /// `‖φ_{j+1} - φ_j‖_*` per step.
    pub increments: Vec<f64>,
    /// Quotients of consecutive increments.
    pub contraction_ratios: Vec<f64>,
    pub failure: Option<SolveFailure>,
}

impl SolveRun {
    pub fn converged(&self) -> bool {
        self.failure.is_none()
    }

    pub fn into_result(self) -> Result<Self> {
        match self.failure {
            Some(e) => Err(Error::Solve(e)),
            None => Ok(self),
        }
    }
}

/// Iterates `φ_{j+1} = T(N(φ_j) - f_λ)` from `φ_0 = 0`.
pub fn picard_solve(t: &RightInverse<'_>, f: &ModeExpansion, cfg: &SolveConfig) -> Result<SolveRun> {
    cfg.validate()?;
    let norms = *t.config();
    let mut phi = ModeExpansion::new(f.n(), f.kmax(), f.grid().clone());
    let mut increments = Vec::new();
    let mut ratios = Vec::new();
    let mut streak = 0;
    for iteration in 1..=cfg.max_iter {
        let next = hbar(t, f, &phi)?;
        let increment = star_norm(&next.combine(1.0, &phi, -1.0)?, &norms);
        let size = star_norm(&next, &norms);
        if let Some(prev) = increments.last().copied() {
            let ratio = if prev > 0.0 { increment / prev } else { 0.0 };
            ratios.push(ratio);
            streak = if ratio >= 1.0 { streak + 1 } else { 0 };
        }
        increments.push(increment);
        phi = next;
        let run = |failure| SolveRun {
            phi: phi.clone(),
            iterations: iteration,
            increments: increments.clone(),
            contraction_ratios: ratios.clone(),
            failure,
        };
        if size > cfg.rho {
            return Ok(run(Some(SolveFailure::LeftBall { iteration, norm: size })));
        }
        if streak >= NON_CONTRACTION_STREAK {
            return Ok(run(Some(SolveFailure::NonContraction { iteration, ratio: *ratios.last().unwrap() })));
        }
        if increment < cfg.tol {
            return Ok(run(None));
        }
    }
    let increment = increments.last().copied().unwrap_or(0.0);
    Ok(SolveRun {
        phi,
        iterations: cfg.max_iter,
        increments,
        contraction_ratios: ratios,
        failure: Some(SolveFailure::MaxIterations { iterations: cfg.max_iter, increment }),
    })
}

/// `u_λ(x) = λ^m (w(λx) + φ(λx))`.
#[derive(Debug, Clone)]
pub struct SolutionFamily<'a> {
    pub lambda: f64,
    gs: &'a GroundState,
    phi: ModeExpansion,
}

pub fn assemble_family<'a>(gs: &'a GroundState, phi: ModeExpansion, lambda: f64) -> Result<SolutionFamily<'a>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter { name: "lambda", reason: format!("need lambda > 0, got {lambda}") });
    }
    if !phi.grid().same_as(gs.grid()) {
        return Err(Error::InvalidProfile("phi and ground state live on different grids".into()));
    }
    Ok(SolutionFamily { lambda, gs, phi })
}

impl SolutionFamily<'_> {
    pub fn phi(&self) -> &ModeExpansion {
        &self.phi
    }

    /// Radial coefficient `k` of `u_λ` at `|x| = r`.
    pub fn eval_mode(&self, k: usize, r: f64) -> f64 {
        let y = self.lambda * r;
        let scale = self.lambda.powf(self.gs.exponents.m);
        let w = if k == 0 { self.gs.eval(y) } else { 0.0 };
        let phi = self.phi.get(k).map_or(0.0, |p| p.eval(y));
        scale * (w + phi)
    }

    /// `u_λ` at `|x| = r` for a radial solution; for several modes the angular
    /// sup bound `Σ_k |u_k|`.
    pub fn eval(&self, r: f64) -> f64 {
        let radial = self.eval_mode(0, r);
        let rest: f64 = self.phi.modes().filter(|(k, _)| *k > 0).map(|(k, _)| self.eval_mode(k, r).abs()).sum();
        radial + rest
    }

    /// `min_r (U_0 - Σ_{k>=1} |φ_k|)` over the grid, `U = w + φ`.
    pub fn min_profile(&self) -> f64 {
        let w = self.gs.w();
        let phi0 = self.phi.coefficient(0);
        (0..w.len())
            .map(|i| {
                let rest: f64 = self.phi.modes().filter(|(k, _)| *k > 0).map(|(_, p)| p.values()[i].abs()).sum();
                w[i] + phi0.values()[i] - rest
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// `sup_{a <= |x| <= b} u_λ` sampled at `samples` log-spaced radii.
    pub fn sup_on_annulus(&self, a: f64, b: f64, samples: usize) -> f64 {
        let n = samples.max(2);
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                self.eval(a * (b / a).powf(t))
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `Δ_k (δ_{k0} w + φ_k) + (U^p)_k + f_k` per mode, with the same truncation
/// as [`nonlinear_remainder`].
pub fn pde_residual(gs: &GroundState, phi: &ModeExpansion, f: &ModeExpansion) -> Result<ModeExpansion> {
    let e = &gs.exponents;
    let g = gs.grid();
    let w = gs.w();
    let phi0 = phi.coefficient(0);
    let u0 = gs.profile.combine(1.0, &phi0, 1.0)?;
    let keys: std::collections::BTreeSet<usize> =
        std::iter::once(0).chain(phi.modes().map(|(k, _)| k)).chain(f.modes().map(|(k, _)| k)).collect();
    let mut out = ModeExpansion::new(e.n, phi.kmax().max(f.kmax()), g.clone());
    for k in keys {
        let fk = f.coefficient(k);
        let values: Vec<f64> = if k == 0 {
            let lap = mode_laplacian(e.n, 0, &u0);
            (0..g.count()).map(|i| lap[i] + u0.values()[i].max(0.0).powf(e.p) + fk.values()[i]).collect()
        } else {
            let pk = phi.coefficient(k);
            let lap = mode_laplacian(e.n, k, &pk);
            (0..g.count())
                .map(|i| {
                    let u = (w[i] + phi0.values()[i]).max(0.0);
                    lap[i] + e.p * u.powf(e.p - 1.0) * pk.values()[i] + fk.values()[i]
                })
                .collect()
        };
        out.insert(k, RadialProfile::from_values(g.clone(), values)?)?;
    }
    Ok(out)
}

/// A posteriori report of one solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub n: u32,
    pub p: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub mu: f64,
    pub r1: f64,
    pub rho: f64,
    pub tol: f64,
    pub kmax: usize,
    pub symmetric: bool,
    pub regime: String,
    pub mode1_skipped: bool,
    pub converged: bool,
    pub failure: Option<SolveFailure>,
    pub iterations: usize,
    pub contraction_ratios: Vec<f64>,
    pub phi_star_norm: f64,
    /// `‖φ - ħ(φ)‖_*` at the returned iterate.
    pub fixed_point_residual: f64,
    pub f_starstar_norm: f64,
    pub f_starstar_inner: f64,
    pub f_starstar_outer: f64,
    pub f_bound: f64,
    pub f_bound_positive_r1: f64,
    pub pde_residual_starstar: f64,
    pub min_profile: f64,
    pub positivity_ok: bool,
    pub u_sup_on_annulus: f64,
}

impl SolveReport {
    /// Converged, inside the ball, contracting, positive and with a small PDE residual.
    pub fn passes(&self, residual_tol: f64) -> bool {
        self.converged
            && self.phi_star_norm <= self.rho
            && self.contraction_ratios.iter().all(|r| *r < 1.0)
            && self.pde_residual_starstar <= residual_tol
            && self.positivity_ok
    }
}

pub const ANNULUS: (f64, f64) = (0.5, 2.0);
const ANNULUS_SAMPLES: usize = 401;

/// Recomputes everything about a finished run from scratch.
pub fn verify_solution(t: &RightInverse<'_>, src: &SourceSpec, f: &ModeExpansion, run: &SolveRun, cfg: &SolveConfig) -> Result<SolveReport> {
    let gs = t.ground_state();
    let e = &gs.exponents;
    let norms: WeightedNormConfig = *t.config();
    let fixed_point_residual = star_norm(&hbar(t, f, &run.phi)?.combine(1.0, &run.phi, -1.0)?, &norms);
    let f_parts: NormParts = starstar_norm_parts(f, &norms);
    let residual = pde_residual(gs, &run.phi, f)?;
    let family = assemble_family(gs, run.phi.clone(), cfg.lambda)?;
    let min_profile = family.min_profile();
    let e_sigma = e.with_sigma(norms.sigma)?;
    Ok(SolveReport {
        n: e.n,
        p: e.p,
        sigma: norms.sigma,
        lambda: cfg.lambda,
        mu: src.mu,
        r1: src.r1,
        rho: cfg.rho,
        tol: cfg.tol,
        kmax: cfg.kmax,
        symmetric: cfg.symmetric,
        regime: e.regime().to_string(),
        mode1_skipped: t.symmetric(),
        converged: run.converged(),
        failure: run.failure,
        iterations: run.iterations,
        contraction_ratios: run.contraction_ratios.clone(),
        phi_star_norm: star_norm(&run.phi, &norms),
        fixed_point_residual,
        f_starstar_norm: f_parts.total(),
        f_starstar_inner: f_parts.inner,
        f_starstar_outer: f_parts.outer,
        f_bound: src.starstar_bound(&e_sigma, cfg.lambda),
        f_bound_positive_r1: src.starstar_bound_positive_r1(&e_sigma, cfg.lambda),
        pde_residual_starstar: crate::linop::starstar_norm(&residual, &norms),
        min_profile,
        positivity_ok: min_profile > 0.0,
        u_sup_on_annulus: family.sup_on_annulus(ANNULUS.0, ANNULUS.1, ANNULUS_SAMPLES),
    })
}

/// Builds `T`, rescales the source, iterates and verifies.
pub fn solve(gs: &GroundState, src: &SourceSpec, cfg: &SolveConfig) -> Result<(SolveRun, SolveReport)> {
    cfg.validate()?;
    let e = &gs.exponents;
    src.validate(e)?;
    if !e.regime().admits_mode1() && !cfg.symmetric {
        return Err(Error::ModeNotAdmissible {
            k: 1,
            reason: format!("p = {} <= (n+1)/(n-3) = {} needs a symmetric run", e.p, e.p_mode1),
        });
    }
    if cfg.symmetric && src.modes.get(&1).is_some_and(|a| *a != 0.0) {
        return Err(Error::ModeNotAdmissible { k: 1, reason: "symmetric run with a nonzero mode-1 source".into() });
    }
    let kmax = cfg.kmax.max(src.kmax());
    let t = RightInverse::new(gs, WeightedNormConfig::new(e), kmax, cfg.symmetric)?;
    let f = rescaled_source(src, e, cfg.lambda, gs.grid())?;
    let run = picard_solve(&t, &f, cfg)?;
    let report = verify_solution(&t, src, &f, &run, cfg)?;
    Ok((run, report))
}

/// Measured Lipschitz quotients of `N` and `ħ` on one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzSample {
    pub distance: f64,
    /// `‖N(φ₁) - N(φ₂)‖_** / ‖φ₁ - φ₂‖_*`
    pub n_quotient: f64,
    /// `‖ħ(φ₁) - ħ(φ₂)‖_* / ‖φ₁ - φ₂‖_*`
    pub kappa: f64,
}

pub fn lipschitz_sample(t: &RightInverse<'_>, f: &ModeExpansion, a: &ModeExpansion, b: &ModeExpansion) -> Result<LipschitzSample> {
    let norms = *t.config();
    let gs = t.ground_state();
    let distance = star_norm(&a.combine(1.0, b, -1.0)?, &norms);
    let dn = nonlinear_remainder(gs, a)?.combine(1.0, &nonlinear_remainder(gs, b)?, -1.0)?;
    let dh = hbar(t, f, a)?.combine(1.0, &hbar(t, f, b)?, -1.0)?;
    Ok(LipschitzSample {
        distance,
        n_quotient: crate::linop::starstar_norm(&dn, &norms) / distance,
        kappa: star_norm(&dh, &norms) / distance,
    })
}

/// `‖N(ε w)‖_**` for each `ε`, and the fitted order of the last pair.
pub fn remainder_scaling(gs: &GroundState, eps: &[f64]) -> Result<(Vec<f64>, f64)> {
    let cfg = WeightedNormConfig::new(&gs.exponents);
    let mut values = Vec::with_capacity(eps.len());
    for &x in eps {
        let phi = ModeExpansion::single(gs.exponents.n, 0, 0, gs.profile.scaled(x))?;
        let nn = nonlinear_remainder(gs, &phi)?;
        values.push(profile_starstar_norm(&nn.coefficient(0), &cfg));
    }
    let order = match eps.len() {
        0 | 1 => f64::NAN,
        k => (values[k - 2] / values[k - 1]).ln() / (eps[k - 2] / eps[k - 1]).ln(),
    };
    Ok((values, order))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::derive_exponents;
    use crate::fowler::ground_state;
    use crate::radialgrid::build_grid;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn gs() -> &'static GroundState {
        static GS: OnceLock<GroundState> = OnceLock::new();
        GS.get_or_init(|| {
            let e = derive_exponents(6, 3.0, None).unwrap();
            ground_state(&e, &build_grid(-12.0, 12.0, 4801).unwrap()).unwrap()
        })
    }

    fn inverse() -> &'static RightInverse<'static> {
        static RI: OnceLock<RightInverse<'static>> = OnceLock::new();
        RI.get_or_init(|| RightInverse::new(gs(), WeightedNormConfig::new(&gs().exponents), 0, false).unwrap())
    }

    fn e() -> Exponents {
        gs().exponents
    }

    #[test]
    fn source_validation() {
        assert!(SourceSpec::radial(3.0, 20.0).validate(&e()).is_err());
        assert!(SourceSpec::radial(4.0, 0.0).validate(&e()).is_err());
        assert!(SourceSpec::radial(4.0, 20.0).validate(&e()).is_ok());
        let mut s = SourceSpec::radial(4.0, 20.0);
        s.modes.insert(0, -1.0);
        assert!(s.validate(&e()).is_err());
        s.modes.insert(0, 1.0);
        s.modes.insert(2, 0.5);
        assert!(s.validate(&e()).is_ok());
        s.modes.insert(3, 0.6);
        assert!(s.validate(&e()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SolveConfig::default().validate().is_ok());
        for bad in [
            SolveConfig { lambda: 0.0, ..Default::default() },
            SolveConfig { rho: 1.0, ..Default::default() },
            SolveConfig { tol: -1.0, ..Default::default() },
            SolveConfig { max_iter: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn unit_lambda_leaves_the_source_alone() {
        let g = build_grid(0.0, 6.0, 1201).unwrap();
        let src = SourceSpec::radial(4.0, 20.0);
        let f = rescaled_source(&src, &e(), 1.0, &g).unwrap();
        for (r, v) in g.r_nodes().iter().zip(f.get(0).unwrap().values()) {
            assert_eq!(*v, src.profile(*r).0);
        }
    }

    #[test]
    fn rescaled_support_and_coverage() {
        let g = gs().grid().clone();
        let src = SourceSpec::radial(4.0, 20.0);
        let f = rescaled_source(&src, &e(), 0.05, &g).unwrap();
        for (r, v) in g.r_nodes().iter().zip(f.get(0).unwrap().values()) {
            if *r <= 1.0 {
                assert_eq!(*v, 0.0);
            } else {
                assert!(*v >= 0.0);
            }
        }
        let short = build_grid(0.0, 12.0, 2401).unwrap();
        assert!(matches!(rescaled_source(&src, &e(), 0.05, &short), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn inner_sup_is_independent_of_lambda() {
        let g = gs().grid().clone();
        let src = SourceSpec::radial(4.0, 20.0);
        let cfg = WeightedNormConfig::new(&e());
        let x = src.mu - 2.0 - e().sigma;
        // sup of t^{2+m} f(t) over the ramp, densely sampled
        let dense = (0..=100_000)
            .map(|i| {
                let t = 20.0 + i as f64 * 1e-5;
                t.powf(2.0 + e().m) * src.profile(t).0
            })
            .fold(0.0, f64::max);
        for lambda in [0.025, 0.0125] {
            let parts = starstar_norm_parts(&rescaled_source(&src, &e(), lambda, &g).unwrap(), &cfg);
            assert!(parts.inner <= src.r1.powf(-x) && parts.inner >= (src.r1 + 1.0).powf(-x));
            // the grid samples the ramp about ten times
            assert!((parts.inner / dense - 1.0).abs() < 5e-3, "{} vs {dense}", parts.inner);
            // the outer sup sits at r = 1, t = 1/λ
            let expected = lambda.powf(src.mu - 2.0 - e().m);
            assert!((parts.outer / expected - 1.0).abs() < 1e-9, "{} vs {expected}", parts.outer);
            assert!(parts.total() <= src.starstar_bound(&e(), lambda));
        }
    }

    #[test]
    fn remainder_of_a_multiple_of_w() {
        let phi = ModeExpansion::single(6, 0, 0, gs().profile.scaled(0.1)).unwrap();
        let n = nonlinear_remainder(gs(), &phi).unwrap();
        for (v, w) in n.get(0).unwrap().values().iter().zip(gs().w()) {
            assert!((v + 0.031 * w.powi(3)).abs() <= 1e-14 * w.powi(3));
        }
        let zero = ModeExpansion::single(6, 0, 0, RadialProfile::zeros(gs().grid().clone())).unwrap();
        assert!(nonlinear_remainder(gs(), &zero).unwrap().is_zero());
    }

    #[test]
    fn remainder_is_quadratic() {
        let (values, order) = remainder_scaling(gs(), &[0.1, 0.05, 0.025]).unwrap();
        assert!(order >= 1.9, "{order} {values:?}");
        assert!(values.windows(2).all(|v| v[1] < v[0]));
    }

    #[test]
    fn positive_part_extension() {
        // w + φ <= 0 contributes nothing from the power
        assert_eq!(remainder_kernel(3.0, -2.0), -1.0 + 6.0);
        assert!(remainder_kernel(2.5, -1.0).abs() < 1e-15 + (-1.0f64 + 2.5).abs());
    }

    proptest! {
        #[test]
        fn series_matches_the_exact_cubic(t in -0.5f64..0.5) {
            let exact = 3.0 * t * t + t * t * t;
            // the direct branch loses ~ε/t² relative to cancellation
            prop_assert!((remainder_kernel(3.0, t) - exact).abs() <= 1e-13 * exact.abs() + 1e-15);
        }

        #[test]
        fn series_and_direct_agree_at_the_switch(p in 1.2f64..6.0, sign in prop::bool::ANY) {
            let t = if sign { SERIES_THRESHOLD } else { -SERIES_THRESHOLD };
            let a = remainder_kernel(p, t * (1.0 - 1e-9));
            let b = remainder_kernel(p, t * (1.0 + 1e-9));
            prop_assert!((a - b).abs() <= 1e-8 * a.abs());
        }
    }

    #[test]
    fn zero_source_converges_at_once() {
        let f = ModeExpansion::single(6, 0, 0, RadialProfile::zeros(gs().grid().clone())).unwrap();
        let run = picard_solve(inverse(), &f, &SolveConfig::default()).unwrap();
        assert!(run.converged());
        assert_eq!(run.iterations, 1);
        assert!(run.phi.is_zero());
        let src = SourceSpec { mu: 4.0, r1: 20.0, modes: BTreeMap::from([(0, 0.0)]) };
        let report = verify_solution(inverse(), &src, &f, &run, &SolveConfig::default()).unwrap();
        assert!(report.pde_residual_starstar <= 1e-7);
        assert!(report.positivity_ok);
    }

    #[test]
    fn tightening_tol_moves_the_fixed_point_by_less_than_tol() {
        let src = SourceSpec::radial(4.0, 20.0);
        let f = rescaled_source(&src, &e(), 0.05, gs().grid()).unwrap();
        let loose = SolveConfig { tol: 1e-6, ..Default::default() };
        let tight = SolveConfig { tol: 5e-7, ..Default::default() };
        let a = picard_solve(inverse(), &f, &loose).unwrap();
        let b = picard_solve(inverse(), &f, &tight).unwrap();
        let cfg = WeightedNormConfig::new(&e());
        assert!(star_norm(&a.phi.combine(1.0, &b.phi, -1.0).unwrap(), &cfg) < 1e-6);
        let c = picard_solve(inverse(), &f, &SolveConfig::default()).unwrap();
        let report = verify_solution(inverse(), &src, &f, &c, &SolveConfig::default()).unwrap();
        assert!(report.fixed_point_residual <= 2.0 * 1e-10);
    }

    #[test]
    fn failures_are_reported() {
        let src = SourceSpec::radial(4.0, 20.0);
        let f = rescaled_source(&src, &e(), 0.05, gs().grid()).unwrap();
        let small = picard_solve(inverse(), &f, &SolveConfig { rho: 1e-4, ..Default::default() }).unwrap();
        assert!(matches!(small.failure, Some(SolveFailure::LeftBall { iteration: 1, .. })));
        assert!(small.clone().into_result().is_err());
        let short = picard_solve(inverse(), &f, &SolveConfig { max_iter: 2, ..Default::default() }).unwrap();
        assert!(matches!(short.failure, Some(SolveFailure::MaxIterations { iterations: 2, .. })));
    }

    #[test]
    fn family_at_unit_scale_is_the_ground_state() {
        let zero = ModeExpansion::new(6, 0, gs().grid().clone());
        let fam = assemble_family(gs(), zero, 1.0).unwrap();
        for r in [0.01, 0.5, 1.0, 3.0, 100.0] {
            assert!((fam.eval(r) - gs().eval(r)).abs() < 1e-12);
        }
        assert!(assemble_family(gs(), ModeExpansion::new(6, 0, gs().grid().clone()), 0.0).is_err());
        // u_λ(x) = λ^m w(λ x) for φ = 0
        let fam = assemble_family(gs(), ModeExpansion::new(6, 0, gs().grid().clone()), 0.1).unwrap();
        assert!((fam.eval(2.0) - 0.1 * gs().eval(0.2)).abs() < 1e-14);
    }

    #[test]
    fn regime_and_symmetry_guards() {
        let mut src = SourceSpec::radial(4.0, 20.0);
        src.modes.insert(1, 0.1);
        let cfg = SolveConfig { symmetric: true, kmax: 1, ..Default::default() };
        assert!(matches!(solve(gs(), &src, &cfg), Err(Error::ModeNotAdmissible { k: 1, .. })));
        let e = derive_exponents(6, 2.2, None).unwrap();
        let g = ground_state(&e, &build_grid(-12.0, 12.0, 1201).unwrap()).unwrap();
        let radial = SourceSpec::radial(5.0, 20.0);
        assert!(solve(&g, &radial, &SolveConfig::default()).is_err());
        let (run, report) = solve(&g, &radial, &SolveConfig { symmetric: true, ..Default::default() }).unwrap();
        assert!(run.converged() && report.mode1_skipped);
    }

    #[test]
    fn multimode_solve_runs() {
        let mut src = SourceSpec::radial(4.0, 20.0);
        src.modes.insert(1, 0.3);
        src.modes.insert(2, 0.2);
        let (run, report) = solve(gs(), &src, &SolveConfig { kmax: 2, ..Default::default() }).unwrap();
        assert!(run.converged(), "{:?}", run.failure);
        assert!(report.positivity_ok);
        assert_eq!(run.phi.modes().count(), 3);
    }

    #[test]
    fn lipschitz_on_a_pair() {
        let src = SourceSpec::radial(4.0, 20.0);
        let f = rescaled_source(&src, &e(), 0.05, gs().grid()).unwrap();
        let a = ModeExpansion::single(6, 0, 0, gs().profile.scaled(0.05)).unwrap();
        let b = ModeExpansion::single(6, 0, 0, gs().profile.scaled(-0.03)).unwrap();
        let s = lipschitz_sample(inverse(), &f, &a, &b).unwrap();
        assert!(s.kappa < 1.0 && s.kappa > 0.0);
        assert!(s.n_quotient > 0.0);
    }
}
