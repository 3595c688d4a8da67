//! The radial ground state `w` of `Δw + w^p = 0`, `w(0) = 1`.
//!
//! The canonical route integrates the autonomous Fowler equation
//! `v'' + α v' - β v + v^p = 0` for `v(s) = r^m w(r)` along the heteroclinic
//! orbit leaving the saddle at the origin. It is carried in the variables
//! `(v, q)` with `q = v' - m v`, which turns the system into
//!
//! ```text
//! v' = q + m v,    q' = -(α + m) q - v^p
//! ```
//!
//! because `m² + α m - β = 0`. Then `w = e^{-ms} v` and `w' = e^{-(m+1)s} q`
//! hold without cancellation near `r = 0`. A direct shooting solver in `r`
//! provides the independent check.

use std::sync::Arc;

use crate::constants::Exponents;
use crate::error::{Error, Result};
use crate::ode::{self, ErrorNorm, Options};
use crate::radialgrid::{d2_ds2, d_ds, Grid, RadialProfile};

/// Offset of the unstable-manifold seed, relative to the equilibrium.
pub const DEFAULT_SEED_OFFSET: f64 = 1e-8;
pub const FOWLER_RTOL: f64 = 1e-11;
/// Starting radius of the direct shooting oracle.
pub const SHOOT_R0: f64 = 1e-6;

/// Phase-plane orbit from the saddle `(0, 0)` to the attractor `(β^{1/(p-1)}, 0)`.
#[derive(Debug, Clone)]
pub struct HeteroclinicOrbit {
    pub grid: Arc<Grid>,
    pub v: Vec<f64>,
    pub v_prime: Vec<f64>,
    pub energy: Vec<f64>,
    pub equilibrium: f64,
}

impl HeteroclinicOrbit {
    /// Largest increase of the energy between consecutive samples (non-positive
    /// for a monotone orbit).
    pub fn max_energy_increase(&self) -> f64 {
        self.energy.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max |dE/ds + α v'²|` with `dE/ds` by finite differences.
    pub fn energy_balance_defect(&self, alpha: f64) -> f64 {
        let de = d_ds(self.grid.step(), &self.energy);
        de.iter()
            .zip(&self.v_prime)
            .skip(2)
            .take(self.energy.len() - 4)
            .map(|(d, vp)| (d + alpha * vp * vp).abs())
            .fold(0.0, f64::max)
    }
}

/// Hamiltonian energy `½ v'² + v^{p+1}/(p+1) - β v²/2`.
pub fn fowler_energy(e: &Exponents, v: f64, v_prime: f64) -> f64 {
    0.5 * v_prime * v_prime + v.powf(e.p + 1.0) / (e.p + 1.0) - 0.5 * e.beta * v * v
}

/// Positive radial solution with `w(0) = 1`.
#[derive(Debug, Clone)]
pub struct GroundState {
    pub exponents: Exponents,
    pub profile: RadialProfile,
    /// `r^m w(r)` at the last node.
    pub l_measured: f64,
    /// Translation in `s` between the seeded heteroclinic and the normalized orbit.
    pub normalization_shift: f64,
    w_s: Vec<f64>,
    w_ss: Vec<f64>,
}

fn taylor_coefficient(e: &Exponents) -> f64 {
    let n = e.nf();
    e.p / (8.0 * n * (n + 2.0))
}

/// `(v, q)` of the normalized orbit from the series `w = 1 - r²/(2n) + b r⁴`.
fn normalized_seed(e: &Exponents, s: f64) -> [f64; 2] {
    let n = e.nf();
    let b = taylor_coefficient(e);
    let r = s.exp();
    let w = 1.0 - r * r / (2.0 * n) + b * r.powi(4);
    let dw = -r / n + 4.0 * b * r.powi(3);
    [(e.m * s).exp() * w, ((e.m + 1.0) * s).exp() * dw]
}

fn fowler_rhs(e: &Exponents) -> impl Fn(f64, &[f64], &mut [f64]) + '_ {
    move |_s, y, dy| {
        let v = y[0];
        dy[0] = y[1] + e.m * v;
        dy[1] = -(e.alpha + e.m) * y[1] - v.max(0.0).powf(e.p);
    }
}

/// Integrates the normalized orbit and returns `(v, q)` at each output `s`.
fn normalized_orbit(e: &Exponents, s_start: f64, outputs: &[f64]) -> Result<Vec<[f64; 2]>> {
    let seed = normalized_seed(e, s_start);
    let opts = Options::default().rtol(FOWLER_RTOL).norm(ErrorNorm::Componentwise);
    let ys = ode::integrate(fowler_rhs(e), s_start, &seed, outputs, &opts)?;
    let cap = 2.0 * e.equilibrium() * 1.05;
    let mut out = Vec::with_capacity(ys.len());
    for (s, y) in outputs.iter().zip(ys) {
        if !(y[0] > 0.0) {
            return Err(Error::Integration(format!("Fowler orbit lost positivity at s = {s}")));
        }
        if y[0] > cap {
            return Err(Error::Integration(format!("Fowler orbit exceeded {cap} at s = {s}")));
        }
        out.push([y[0], y[1]]);
    }
    Ok(out)
}

fn seed_start(e: &Exponents, g: &Grid, offset_factor: f64) -> (f64, f64) {
    let delta = offset_factor * e.equilibrium();
    let s_seed = delta.ln() / e.m;
    (s_seed, g.s_min().min(s_seed))
}

pub fn integrate_heteroclinic(e: &Exponents, g: &Arc<Grid>) -> Result<HeteroclinicOrbit> {
    integrate_heteroclinic_with_offset(e, g, DEFAULT_SEED_OFFSET)
}

/// The orbit seeded at `s_min` with `v = δ = offset_factor · β^{1/(p-1)}` on the
/// unstable manifold `v' ≈ m v`.
pub fn integrate_heteroclinic_with_offset(e: &Exponents, g: &Arc<Grid>, offset_factor: f64) -> Result<HeteroclinicOrbit> {
    let (s_seed, _) = seed_start(e, g, offset_factor);
    let shift = g.s_min() - s_seed;
    let outputs: Vec<f64> = g.nodes().iter().map(|s| s - shift).collect();
    let states = normalized_orbit(e, s_seed, &outputs)?;
    let v: Vec<f64> = states.iter().map(|y| y[0]).collect();
    let v_prime: Vec<f64> = states.iter().map(|y| y[1] + e.m * y[0]).collect();
    let energy = v.iter().zip(&v_prime).map(|(a, b)| fowler_energy(e, *a, *b)).collect();
    Ok(HeteroclinicOrbit { grid: g.clone(), v, v_prime, energy, equilibrium: e.equilibrium() })
}

pub fn ground_state(e: &Exponents, g: &Arc<Grid>) -> Result<GroundState> {
    ground_state_with_offset(e, g, DEFAULT_SEED_OFFSET)
}

pub fn ground_state_with_offset(e: &Exponents, g: &Arc<Grid>, offset_factor: f64) -> Result<GroundState> {
    let (s_seed, s_start) = seed_start(e, g, offset_factor);
    let states = normalized_orbit(e, s_start, g.nodes())?;
    let mut values = Vec::with_capacity(g.count());
    let mut derivative = Vec::with_capacity(g.count());
    for (s, y) in g.nodes().iter().zip(&states) {
        values.push((-e.m * s).exp() * y[0]);
        derivative.push((-(e.m + 1.0) * s).exp() * y[1]);
    }
    check_head_limit(g, &values)?;
    let profile = RadialProfile::new(g.clone(), values, derivative)?.with_exponents(0.0, -e.m);
    Ok(GroundState::from_profile(*e, profile, g.s_min() - s_seed))
}

fn check_head_limit(g: &Grid, w: &[f64]) -> Result<()> {
    let decade = ((10f64).ln() / g.step()).ceil() as usize;
    let w0 = w[0];
    let spread = w.iter().take(decade.min(w.len())).map(|x| (x - w0).abs()).fold(0.0, f64::max);
    if spread > 1e-6 * w0.abs() || (w0 - 1.0).abs() > 1e-6 {
        return Err(Error::Integration(format!("head limit of r^-m v not converged (spread {spread:e}, w(r_min) = {w0})")));
    }
    Ok(())
}

/// Direct shooting of `w'' + (n-1)/r w' + w^p = 0` from `r0 = 1e-6` with
/// series data; the independent check on [`ground_state`].
pub fn shoot_direct(e: &Exponents, g: &Arc<Grid>, tol: f64) -> Result<GroundState> {
    let n = e.nf();
    let b = taylor_coefficient(e);
    let series = |r: f64| (1.0 - r * r / (2.0 * n) + b * r.powi(4), -r / n + 4.0 * b * r.powi(3));
    let r0 = SHOOT_R0;
    let split = g.r_nodes().iter().position(|&r| r >= r0).unwrap_or(g.count());
    let outputs = &g.r_nodes()[split..];
    let (w0, dw0) = series(r0);
    let opts = Options::default().rtol(tol).norm(ErrorNorm::Componentwise);
    let ys = ode::integrate(
        |r, y, dy| {
            dy[0] = y[1];
            dy[1] = -(n - 1.0) / r * y[1] - y[0].max(0.0).powf(e.p);
        },
        r0,
        &[w0, dw0],
        outputs,
        &opts,
    )?;
    let mut values: Vec<f64> = Vec::with_capacity(g.count());
    let mut derivative: Vec<f64> = Vec::with_capacity(g.count());
    for &r in &g.r_nodes()[..split] {
        let (w, dw) = series(r);
        values.push(w);
        derivative.push(dw);
    }
    for (r, y) in outputs.iter().zip(ys) {
        if !(y[0] > 0.0) {
            return Err(Error::Integration(format!("direct shooting lost positivity at r = {r}")));
        }
        values.push(y[0]);
        derivative.push(y[1]);
    }
    let profile = RadialProfile::new(g.clone(), values, derivative)?.with_exponents(0.0, -e.m);
    Ok(GroundState::from_profile(*e, profile, 0.0))
}

impl GroundState {
    /// Wraps a sampled, normalized ground state (e.g. one read back from disk).
    pub fn from_profile(exponents: Exponents, profile: RadialProfile, normalization_shift: f64) -> Self {
        let g = profile.grid().clone();
        let w_s = profile.s_derivative();
        let nm2 = exponents.nf() - 2.0;
        let w_ss = g
            .nodes()
            .iter()
            .zip(profile.values().iter().zip(&w_s))
            .map(|(s, (w, ws))| -nm2 * ws - (2.0 * s).exp() * w.powf(exponents.p))
            .collect();
        let last = g.count() - 1;
        let l_measured = g.r_max().powf(exponents.m) * profile.values()[last];
        let profile = profile.with_exponents(0.0, -exponents.m);
        Self { exponents, profile, l_measured, normalization_shift, w_s, w_ss }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.profile.grid()
    }

    pub fn w(&self) -> &[f64] {
        self.profile.values()
    }

    /// `w` and `dw/ds` at arbitrary `s` (quintic Hermite inside the grid, the
    /// series near 0 and the `r^{-m}` asymptote beyond the last node).
    pub fn eval_s(&self, s: f64) -> (f64, f64) {
        let g = self.grid();
        let e = &self.exponents;
        if s < g.s_min() {
            let n = e.nf();
            let b = taylor_coefficient(e);
            let r2 = (2.0 * s).exp();
            return (1.0 - r2 / (2.0 * n) + b * r2 * r2, -r2 / n + 4.0 * b * r2 * r2);
        }
        if s > g.s_max() {
            let w = self.l_measured * (-e.m * s).exp();
            return (w, -e.m * w);
        }
        let (i, t) = g.locate(s);
        let h = g.step();
        let w = self.profile.values();
        let (t2, t3) = (t * t, t * t * t);
        let (t4, t5) = (t3 * t, t3 * t2);
        let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
        let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
        let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
        let h5 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
        let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
        let h3 = 0.5 * (t3 - 2.0 * t4 + t5);
        let val = h0 * w[i] + h1 * h * self.w_s[i] + h2 * h * h * self.w_ss[i]
            + h5 * w[i + 1]
            + h4 * h * self.w_s[i + 1]
            + h3 * h * h * self.w_ss[i + 1];
        let dh0 = -30.0 * t2 + 60.0 * t3 - 30.0 * t4;
        let dh1 = 1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4;
        let dh2 = 0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4);
        let dh5 = -dh0;
        let dh4 = -12.0 * t2 + 28.0 * t3 - 15.0 * t4;
        let dh3 = 0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4);
        let dval = (dh0 * w[i] + dh1 * h * self.w_s[i] + dh2 * h * h * self.w_ss[i]
            + dh5 * w[i + 1]
            + dh4 * h * self.w_s[i + 1]
            + dh3 * h * h * self.w_ss[i + 1])
            / h;
        (val, dval)
    }

    /// `w(r)`.
    pub fn eval(&self, r: f64) -> f64 {
        self.eval_s(r.ln()).0
    }

    /// `p e^{2s} w^{p-1}`, the potential of the linearized operator in `s`.
    pub fn potential_s(&self, s: f64) -> f64 {
        let (w, _) = self.eval_s(s);
        self.exponents.p * (2.0 * s).exp() * w.max(0.0).powf(self.exponents.p - 1.0)
    }

    /// `max_r |Δw + w^p| r^{m+2}` with the Laplacian by finite differences.
    pub fn weighted_residual(&self) -> f64 {
        let g = self.grid();
        let w = self.profile.values();
        let ws = d_ds(g.step(), w);
        let wss = d2_ds2(g.step(), w);
        let e = &self.exponents;
        (0..g.count())
            .map(|i| {
                let s = g.nodes()[i];
                // r^{m+2} (Δw + w^p) = e^{ms} (w_ss + (n-2) w_s) + e^{(m+2)s} w^p
                let res = (e.m * s).exp() * (wss[i] + (e.nf() - 2.0) * ws[i]) + ((e.m + 2.0) * s).exp() * w[i].powf(e.p);
                res.abs()
            })
            .fold(0.0, f64::max)
    }

    /// `z_{1,0} = r w' + m w`, the mode-0 kernel element from scaling.
    pub fn scaling_kernel(&self) -> Result<RadialProfile> {
        let e = &self.exponents;
        let g = self.grid();
        let w = self.profile.values();
        let dw = self.profile.derivative();
        let mut values = Vec::with_capacity(g.count());
        let mut derivative = Vec::with_capacity(g.count());
        for i in 0..g.count() {
            let r = g.r_nodes()[i];
            values.push(r * dw[i] + e.m * w[i]);
            derivative.push((e.m + 2.0 - e.nf()) * dw[i] - r * w[i].powf(e.p));
        }
        RadialProfile::new(g.clone(), values, derivative)
    }

    /// `z_1 = -w'`, the positive mode-1 kernel element from translations.
    pub fn translation_kernel(&self) -> Result<RadialProfile> {
        let e = &self.exponents;
        let g = self.grid();
        let w = self.profile.values();
        let dw = self.profile.derivative();
        let values: Vec<f64> = dw.iter().map(|d| -d).collect();
        let derivative = (0..g.count())
            .map(|i| (e.nf() - 1.0) / g.r_nodes()[i] * dw[i] + w[i].powf(e.p))
            .collect();
        RadialProfile::new(g.clone(), values, derivative)
    }

    /// `sup_r (1 + r)^m w(r)` over the grid.
    pub fn decay_constant(&self) -> f64 {
        let m = self.exponents.m;
        self.grid().r_nodes().iter().zip(self.w()).map(|(r, w)| (1.0 + r).powf(m) * w).fold(0.0, f64::max)
    }
}

/// `w_λ(r) = λ^m w(λ r)` sampled on the ground state's grid.
pub fn scale_profile(gs: &GroundState, lambda: f64) -> Result<RadialProfile> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter { name: "lambda", reason: format!("need lambda > 0, got {lambda}") });
    }
    let m = gs.exponents.m;
    let g = gs.grid();
    let shift = lambda.ln();
    let scale = lambda.powf(m);
    let (values, derivative): (Vec<f64>, Vec<f64>) = g
        .nodes()
        .iter()
        .zip(g.r_nodes())
        .map(|(s, r)| {
            let (w, ws) = gs.eval_s(s + shift);
            (scale * w, scale * ws / r)
        })
        .unzip();
    Ok(RadialProfile::new(g.clone(), values, derivative)?.with_exponents(0.0, -m))
}
