//! Weighted norms and the mode-by-mode right inverse `T` of `Δ + p w^{p-1}`.
//!
//! Functions on `R^n` are handled in coefficient space: a [`ModeExpansion`]
//! maps a harmonic degree `k` to the radial coefficient against one
//! orthonormal spherical harmonic of that degree. For each degree the radial
//! operator
//!
//! ```text
//! L_k φ = φ'' + (n-1)/r φ' + (p w^{p-1} - k(n-2+k)/r²) φ
//! ```
//!
//! is inverted by variation of parameters:
//!
//! * `k = 0` pairs the scaling kernel `z_{1,0} = r w' + m w` with a second
//!   solution `z_{2,0} ~ r^{2-n}` integrated outward from the first node.
//! * `k = 1` uses reduction of order on the translation kernel `z_1 = -w'`.
//! * `k >= 2` pairs the solution regular at 0 (`~ r^k`) with the one
//!   recessive at infinity.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::constants::{mode_eigenvalue, Exponents};
use crate::error::{Error, Result};
use crate::fowler::GroundState;
use crate::ode::{self, ErrorNorm, Options};
use crate::radialgrid::{anchored_integral, apply_radial_operator, integrate_in_s, interval_pieces, Grid, RadialProfile};

/// Relative Wronskian drift above which a homogeneous pair is rejected.
pub const WRONSKIAN_ABORT: f64 = 1e-6;
const HOMOGENEOUS_RTOL: f64 = 1e-12;

/// Weights of `‖·‖_*` (`r^σ` inside, `r^m` outside) and `‖·‖_**` (two more powers).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedNormConfig {
    pub sigma: f64,
    pub m: f64,
    pub split_radius: f64,
}

impl WeightedNormConfig {
    pub fn new(e: &Exponents) -> Self {
        Self { sigma: e.sigma, m: e.m, split_radius: 1.0 }
    }

    pub fn with_sigma(e: &Exponents, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma < e.nf() - 2.0) {
            return Err(Error::InvalidParameter { name: "sigma", reason: format!("need 0 < sigma < n - 2, got {sigma}") });
        }
        Ok(Self { sigma, ..Self::new(e) })
    }
}

/// Inner (`r <= split`) and outer (`r >= split`) parts of a weighted sup norm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct NormParts {
    pub inner: f64,
    pub outer: f64,
}

impl NormParts {
    pub fn total(&self) -> f64 {
        self.inner + self.outer
    }
}

/// Radial coefficients of a function on `R^n` indexed by harmonic degree.
/// Absent degrees are identically zero.
#[derive(Debug, Clone)]
pub struct ModeExpansion {
    n: u32,
    kmax: usize,
    grid: Arc<Grid>,
    coefficients: BTreeMap<usize, RadialProfile>,
}

impl ModeExpansion {
    pub fn new(n: u32, kmax: usize, grid: Arc<Grid>) -> Self {
        Self { n, kmax, grid, coefficients: BTreeMap::new() }
    }

    pub fn single(n: u32, kmax: usize, k: usize, profile: RadialProfile) -> Result<Self> {
        let grid = profile.grid().clone();
        let mut out = Self::new(n, kmax, grid);
        out.insert(k, profile)?;
        Ok(out)
    }

    pub fn insert(&mut self, k: usize, profile: RadialProfile) -> Result<()> {
        if k > self.kmax {
            return Err(Error::InvalidParameter { name: "kmax", reason: format!("mode {k} exceeds kmax = {}", self.kmax) });
        }
        if !profile.grid().same_as(&self.grid) {
            return Err(Error::InvalidProfile("mode coefficient on a different grid".into()));
        }
        self.coefficients.insert(k, profile);
        Ok(())
    }

    pub fn n(&self) -> u32 {
        self.n
    }
    pub fn kmax(&self) -> usize {
        self.kmax
    }
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn get(&self, k: usize) -> Option<&RadialProfile> {
        self.coefficients.get(&k)
    }

    pub fn coefficient(&self, k: usize) -> RadialProfile {
        self.coefficients.get(&k).cloned().unwrap_or_else(|| RadialProfile::zeros(self.grid.clone()))
    }

    pub fn modes(&self) -> impl Iterator<Item = (usize, &RadialProfile)> {
        self.coefficients.iter().map(|(k, p)| (*k, p))
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.values().all(RadialProfile::is_zero)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            coefficients: self.coefficients.iter().map(|(k, p)| (*k, p.scaled(a))).collect(),
            ..self.clone()
        }
    }

    /// `a * self + b * other` mode by mode.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::InvalidProfile("expansions on different grids".into()));
        }
        let mut out = Self::new(self.n, self.kmax.max(other.kmax), self.grid.clone());
        let keys: std::collections::BTreeSet<usize> =
            self.coefficients.keys().chain(other.coefficients.keys()).copied().collect();
        for k in keys {
            let p = match (self.get(k), other.get(k)) {
                (Some(x), Some(y)) => x.combine(a, y, b)?,
                (Some(x), None) => x.scaled(a),
                (None, Some(y)) => y.scaled(b),
                (None, None) => unreachable!(),
            };
            out.coefficients.insert(k, p);
        }
        Ok(out)
    }

    /// `Σ_k |φ_k(r_i)|` at every node, the angular sup proxy.
    pub fn abs_sum(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.grid.count()];
        for p in self.coefficients.values() {
            for (a, v) in acc.iter_mut().zip(p.values()) {
                *a += v.abs();
            }
        }
        acc
    }
}

/// `sup_{r<=split} r^a S(r) + sup_{r>=split} r^b S(r)` over grid nodes.
pub fn weighted_sup(grid: &Grid, samples: &[f64], inner_power: f64, outer_power: f64, split: f64) -> NormParts {
    let ls = split.ln();
    let mut parts = NormParts::default();
    for (s, v) in grid.nodes().iter().zip(samples) {
        let a = v.abs();
        if *s <= ls + 1e-12 {
            parts.inner = parts.inner.max((inner_power * s).exp() * a);
        }
        if *s >= ls - 1e-12 {
            parts.outer = parts.outer.max((outer_power * s).exp() * a);
        }
    }
    parts
}

pub fn star_norm_parts(phi: &ModeExpansion, cfg: &WeightedNormConfig) -> NormParts {
    weighted_sup(&phi.grid, &phi.abs_sum(), cfg.sigma, cfg.m, cfg.split_radius)
}

pub fn starstar_norm_parts(h: &ModeExpansion, cfg: &WeightedNormConfig) -> NormParts {
    weighted_sup(&h.grid, &h.abs_sum(), 2.0 + cfg.sigma, 2.0 + cfg.m, cfg.split_radius)
}

/// `‖φ‖_*` with the triangle-inequality proxy over modes.
pub fn star_norm(phi: &ModeExpansion, cfg: &WeightedNormConfig) -> f64 {
    star_norm_parts(phi, cfg).total()
}

/// `‖h‖_**` with the triangle-inequality proxy over modes.
pub fn starstar_norm(h: &ModeExpansion, cfg: &WeightedNormConfig) -> f64 {
    starstar_norm_parts(h, cfg).total()
}

pub fn profile_star_norm(p: &RadialProfile, cfg: &WeightedNormConfig) -> f64 {
    weighted_sup(p.grid(), p.values(), cfg.sigma, cfg.m, cfg.split_radius).total()
}

pub fn profile_starstar_norm(p: &RadialProfile, cfg: &WeightedNormConfig) -> f64 {
    weighted_sup(p.grid(), p.values(), 2.0 + cfg.sigma, 2.0 + cfg.m, cfg.split_radius).total()
}

/// Two independent solutions of `L_k z = 0`. `z_growing` is the solution
/// regular at the origin; `z_decaying` is singular there (mode 0) or recessive
/// at infinity (`k >= 2`). `z_decaying` is scaled so that
/// `r^{n-1} (z_decaying z_growing' - z_decaying' z_growing) = wronskian_constant = 1`.
#[derive(Debug, Clone)]
pub struct HomogeneousPair {
    pub k: usize,
    pub n: u32,
    pub z_growing: RadialProfile,
    pub z_decaying: RadialProfile,
    pub wronskian_constant: f64,
}

impl HomogeneousPair {
    /// `r^{n-1} W(z_decaying, z_growing)` at every node.
    pub fn scaled_wronskian(&self) -> Vec<f64> {
        scaled_wronskian(self.n, &self.z_decaying, &self.z_growing)
    }

    /// `max_i |c_i / c - 1|` over the nodes.
    pub fn wronskian_drift(&self) -> f64 {
        let c = self.wronskian_constant;
        self.scaled_wronskian().iter().map(|x| (x / c - 1.0).abs()).fold(0.0, f64::max)
    }
}

fn scaled_wronskian(n: u32, a: &RadialProfile, b: &RadialProfile) -> Vec<f64> {
    let g = a.grid();
    let (a_s, b_s) = (a.s_derivative(), b.s_derivative());
    (0..g.count())
        .map(|i| ((n as f64 - 2.0) * g.nodes()[i]).exp() * (a.values()[i] * b_s[i] - a_s[i] * b.values()[i]))
        .collect()
}

/// Integrates `z_ss + (n-2) z_s + (P(s) - λ_k) z = 0` from node `start` with
/// data `(z, z_s)`, outward to both ends of the grid.
fn integrate_homogeneous(gs: &GroundState, k: usize, start: usize, seed: [f64; 2]) -> Result<RadialProfile> {
    let g = gs.grid().clone();
    let nm2 = gs.exponents.nf() - 2.0;
    let lam = mode_eigenvalue(gs.exponents.n, k);
    let rhs = |s: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = y[1];
        dy[1] = -nm2 * y[1] - (gs.potential_s(s) - lam) * y[0];
    };
    let opts = Options::default().rtol(HOMOGENEOUS_RTOL).norm(ErrorNorm::Shared);
    let s0 = g.nodes()[start];
    let mut states = vec![seed.to_vec(); g.count()];
    if start + 1 < g.count() {
        let ys = ode::integrate(rhs, s0, &seed, &g.nodes()[start + 1..], &opts)?;
        states[start + 1..].clone_from_slice(&ys);
    }
    if start > 0 {
        let outputs: Vec<f64> = g.nodes()[..start].iter().rev().copied().collect();
        let ys = ode::integrate(rhs, s0, &seed, &outputs, &opts)?;
        for (j, y) in ys.into_iter().enumerate() {
            states[start - 1 - j] = y;
        }
    }
    let values: Vec<f64> = states.iter().map(|y| y[0]).collect();
    let derivative: Vec<f64> = states.iter().zip(g.r_nodes()).map(|(y, r)| y[1] / r).collect();
    RadialProfile::new(g, values, derivative).map_err(|e| Error::Integration(format!("mode {k} homogeneous solution: {e}")))
}

fn normalize_pair(n: u32, k: usize, z_growing: RadialProfile, z_decaying: RadialProfile) -> Result<HomogeneousPair> {
    let g = z_growing.grid().clone();
    let c = scaled_wronskian(n, &z_decaying, &z_growing);
    let c_ref = c[g.nearest(0.0)];
    if c_ref == 0.0 || !c_ref.is_finite() {
        return Err(Error::WronskianDegenerate(k));
    }
    let drift = c.iter().map(|x| (x / c_ref - 1.0).abs()).fold(0.0, f64::max);
    if !(drift <= WRONSKIAN_ABORT) {
        return Err(Error::WronskianDrift { k, drift });
    }
    let z_decaying = z_decaying.scaled(1.0 / c_ref);
    Ok(HomogeneousPair { k, n, z_growing, z_decaying, wronskian_constant: 1.0 })
}

/// `z_{1,0} = r w' + m w` and a second solution `z_{2,0} ~ r^{2-n}`.
///
/// Far out `r w' + m w` is a small difference of two `O(r^{-m})` terms, so the
/// closed form only seeds `z_{1,0}` at the first node and the linear equation
/// carries it outward. `z_{2,0}` starts from zero at a node near `r = 1` where
/// `z_{1,0}` is well away from zero, with slope fixing the Wronskian, and is
/// integrated toward both ends; toward the origin `r^{2-n}` dominates.
pub fn homogeneous_mode0(gs: &GroundState) -> Result<HomogeneousPair> {
    let e = &gs.exponents;
    let g = gs.grid();
    let closed = gs.scaling_kernel()?;
    let z1 = integrate_homogeneous(gs, 0, 0, [closed.values()[0], closed.s_derivative()[0]])?;
    let mut start = g.nearest(0.0);
    while start > 0 && z1.values()[start] < 0.5 * e.m {
        start -= 1;
    }
    let s0 = g.nodes()[start];
    // r^{n-1} W(z2, z1) = 1 with z2 = 0 gives z2_s = -r^{2-n} / z1
    let slope = -((2.0 - e.nf()) * s0).exp() / z1.values()[start];
    let z2 = integrate_homogeneous(gs, 0, start, [0.0, slope])?;
    normalize_pair(e.n, 0, z1, z2)
}

/// Recessive solutions at both ends for degree `k >= 2`, each equal to 1 at `r = 1`.
pub fn homogeneous_modek(gs: &GroundState, k: usize) -> Result<HomogeneousPair> {
    if k < 2 {
        return Err(Error::InvalidParameter { name: "k", reason: format!("recessive pair needs k >= 2, got {k}") });
    }
    let e = &gs.exponents;
    let g = gs.grid();
    let nm2 = e.nf() - 2.0;
    let lam = mode_eigenvalue(e.n, k);
    let kf = k as f64;
    let head_scale = (kf * g.s_min()).max(-600.0).exp();
    let z_g = integrate_homogeneous(gs, k, 0, [head_scale, kf * head_scale])?;
    // decaying indicial root with the potential frozen at the last node
    let q = gs.potential_s(g.s_max()) - lam;
    let disc = nm2 * nm2 - 4.0 * q;
    if !(disc > 0.0) {
        return Err(Error::WronskianDegenerate(k));
    }
    let gamma = 0.5 * (-nm2 - disc.sqrt());
    let tail_scale = (gamma * g.s_max()).max(-600.0).exp();
    let z_d = integrate_homogeneous(gs, k, g.count() - 1, [tail_scale, gamma * tail_scale])?;
    let mid = g.nearest(0.0);
    let z_g = z_g.scaled(1.0 / z_g.values()[mid]);
    let z_d = z_d.scaled(1.0 / z_d.values()[mid]);
    normalize_pair(e.n, k, z_g, z_d)
}

fn check_grid(h: &RadialProfile, g: &Grid) -> Result<()> {
    if !h.grid().same_as(g) {
        return Err(Error::InvalidProfile("source and ground state live on different grids".into()));
    }
    Ok(())
}

/// `z h r^n` at the nodes: the `s`-integrand of `∫ z h r^{n-1} dr`.
fn weighted_product(z: &RadialProfile, h: &RadialProfile, n: u32) -> Vec<f64> {
    let g = z.grid();
    (0..g.count()).map(|i| z.values()[i] * h.values()[i] * (n as f64 * g.nodes()[i]).exp()).collect()
}

/// `ca zg A + cb zd B`; the derivative needs no integrand terms since they cancel.
fn assemble(zg: &RadialProfile, a: &[f64], ca: f64, zd: &RadialProfile, b: &[f64], cb: f64) -> Result<RadialProfile> {
    let g = zg.grid();
    let values = (0..g.count()).map(|i| ca * zg.values()[i] * a[i] + cb * zd.values()[i] * b[i]).collect();
    let derivative = (0..g.count())
        .map(|i| ca * zg.derivative()[i] * a[i] + cb * zd.derivative()[i] * b[i])
        .collect();
    RadialProfile::new(g.clone(), values, derivative)
}

/// Mode-0 variation of parameters:
/// `φ_0 = z_{1,0} ∫_1^r z_{2,0} h t^{n-1} - z_{2,0} ∫_0^r z_{1,0} h t^{n-1}`.
pub fn solve_mode0(h0: &RadialProfile, pair: &HomogeneousPair) -> Result<RadialProfile> {
    let g = pair.z_growing.grid();
    check_grid(h0, g)?;
    if h0.is_zero() {
        return Ok(RadialProfile::zeros(g.clone()));
    }
    let n = pair.n;
    let (zg, zd) = (&pair.z_growing, &pair.z_decaying);
    let a = anchored_integral(&interval_pieces(g.step(), &weighted_product(zd, h0, n)), g.nearest(0.0));
    let head = zg.head_exponent() + h0.head_exponent() + n as f64;
    let b = integrate_in_s(g.step(), &weighted_product(zg, h0, n), Some(head), None)?.from_left;
    assemble(zg, &a, 1.0, zd, &b, -1.0)
}

/// Mode-1 solution by reduction of order on `z_1 = -w'`:
/// `φ_1 = z_1(r) ∫_1^r z_1^{-2} t^{1-n} ∫_0^t z_1 h τ^{n-1} dτ dt`.
pub fn solve_mode1(h1: &RadialProfile, gs: &GroundState) -> Result<RadialProfile> {
    let e = &gs.exponents;
    if !e.regime().admits_mode1() {
        return Err(Error::ModeNotAdmissible {
            k: 1,
            reason: format!("p = {} does not exceed (n+1)/(n-3) = {}", e.p, e.p_mode1),
        });
    }
    let g = gs.grid();
    check_grid(h1, g)?;
    if h1.is_zero() {
        return Ok(RadialProfile::zeros(g.clone()));
    }
    let z = gs.translation_kernel()?;
    if let Some(i) = z.values().iter().position(|v| !(*v > 0.0)) {
        return Err(Error::InvalidProfile(format!("-w' is not positive at r = {}", g.r_nodes()[i])));
    }
    let n = e.n;
    let head = z.head_exponent() + h1.head_exponent() + n as f64;
    let inner = integrate_in_s(g.step(), &weighted_product(&z, h1, n), Some(head), None)?.from_left;
    // d/ds of the outer integral: z^{-2} r^{2-n} I
    let outer_integrand: Vec<f64> = (0..g.count())
        .map(|i| inner[i] * ((2.0 - n as f64) * g.nodes()[i]).exp() / (z.values()[i] * z.values()[i]))
        .collect();
    let outer = anchored_integral(&interval_pieces(g.step(), &outer_integrand), g.nearest(0.0));
    let values = (0..g.count()).map(|i| z.values()[i] * outer[i]).collect();
    let derivative = (0..g.count())
        .map(|i| {
            let r = g.r_nodes()[i];
            z.derivative()[i] * outer[i] + inner[i] * r.powi(1 - n as i32) / z.values()[i]
        })
        .collect();
    RadialProfile::new(g.clone(), values, derivative)
}

/// Bounded mode-`k` solution (`k >= 2`) from a recessive pair:
/// `φ = -z_g ∫_r^∞ z_d h t^{n-1} - z_d ∫_0^r z_g h t^{n-1}`.
pub fn solve_modek_with_pair(hk: &RadialProfile, pair: &HomogeneousPair) -> Result<RadialProfile> {
    let g = pair.z_growing.grid();
    check_grid(hk, g)?;
    if hk.is_zero() {
        return Ok(RadialProfile::zeros(g.clone()));
    }
    let n = pair.n;
    let (zg, zd) = (&pair.z_growing, &pair.z_decaying);
    let tail = zd.tail_exponent() + hk.tail_exponent() + n as f64;
    let a = integrate_in_s(g.step(), &weighted_product(zd, hk, n), None, Some(tail))?.from_right;
    let head = zg.head_exponent() + hk.head_exponent() + n as f64;
    let b = integrate_in_s(g.step(), &weighted_product(zg, hk, n), Some(head), None)?.from_left;
    assemble(zg, &a, -1.0, zd, &b, -1.0)
}

pub fn solve_modek(k: usize, hk: &RadialProfile, gs: &GroundState) -> Result<RadialProfile> {
    let pair = homogeneous_modek(gs, k)?;
    solve_modek_with_pair(hk, &pair)
}

/// Second-order finite-difference solve of `L_k φ = h` with `φ = 0` at both
/// ends of the grid. Used to cross-check the variation-of-parameters solver.
pub fn bvp_modek(k: usize, hk: &RadialProfile, gs: &GroundState) -> Result<RadialProfile> {
    let g = gs.grid();
    check_grid(hk, g)?;
    let e = &gs.exponents;
    let nm2 = e.nf() - 2.0;
    let lam = mode_eigenvalue(e.n, k);
    let h = g.step();
    let count = g.count();
    let inner = count - 2;
    let lower = 1.0 / (h * h) - nm2 / (2.0 * h);
    let upper = 1.0 / (h * h) + nm2 / (2.0 * h);
    let mut diag = Vec::with_capacity(inner);
    let mut rhs = Vec::with_capacity(inner);
    for i in 1..count - 1 {
        let s = g.nodes()[i];
        diag.push(-2.0 / (h * h) + gs.potential_s(s) - lam);
        rhs.push((2.0 * s).exp() * hk.values()[i]);
    }
    // Thomas algorithm
    let mut c_prime = vec![0.0; inner];
    let mut d_prime = vec![0.0; inner];
    c_prime[0] = upper / diag[0];
    d_prime[0] = rhs[0] / diag[0];
    for i in 1..inner {
        let denom = diag[i] - lower * c_prime[i - 1];
        if denom == 0.0 {
            return Err(Error::Integration(format!("singular mode-{k} difference system")));
        }
        c_prime[i] = upper / denom;
        d_prime[i] = (rhs[i] - lower * d_prime[i - 1]) / denom;
    }
    let mut values = vec![0.0; count];
    values[inner] = d_prime[inner - 1];
    for i in (1..inner).rev() {
        values[i] = d_prime[i - 1] - c_prime[i - 1] * values[i + 1];
    }
    RadialProfile::from_values(g.clone(), values)
}

/// Per-mode diagnostics of one application of `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeRecord {
    pub k: usize,
    pub starstar_in: f64,
    pub star_out: f64,
    /// `‖L_k φ_k - h_k‖_**`
    pub residual: f64,
    #[serde(rename = "C_k")]
    pub c_k: f64,
}

#[derive(Debug, Clone)]
pub struct TOutput {
    pub phi: ModeExpansion,
    /// `‖φ‖_* / ‖h‖_**` (zero for `h = 0`).
    pub c_t: f64,
    pub records: Vec<ModeRecord>,
}

/// `T` with the homogeneous pairs for modes `0, 2, ..., kmax` built once.
#[derive(Debug, Clone)]
pub struct RightInverse<'a> {
    gs: &'a GroundState,
    cfg: WeightedNormConfig,
    kmax: usize,
    symmetric: bool,
    pairs: BTreeMap<usize, HomogeneousPair>,
}

impl<'a> RightInverse<'a> {
    /// With `symmetric` set, mode-1 sources are refused and the mode-1 solver
    /// is never called; this is what makes `(n+2)/(n-2) < p <= (n+1)/(n-3)` usable.
    pub fn new(gs: &'a GroundState, cfg: WeightedNormConfig, kmax: usize, symmetric: bool) -> Result<Self> {
        let modes: Vec<usize> = std::iter::once(0).chain(2..=kmax).collect();
        let pairs = modes
            .into_par_iter()
            .map(|k| {
                let pair = if k == 0 { homogeneous_mode0(gs)? } else { homogeneous_modek(gs, k)? };
                Ok((k, pair))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self { gs, cfg, kmax, symmetric, pairs })
    }

    pub fn ground_state(&self) -> &GroundState {
        self.gs
    }
    pub fn config(&self) -> &WeightedNormConfig {
        &self.cfg
    }
    pub fn kmax(&self) -> usize {
        self.kmax
    }
    pub fn symmetric(&self) -> bool {
        self.symmetric
    }
    pub fn pair(&self, k: usize) -> Option<&HomogeneousPair> {
        self.pairs.get(&k)
    }

    /// Solves `L_k φ = h` for a single degree.
    pub fn solve_mode(&self, k: usize, hk: &RadialProfile) -> Result<RadialProfile> {
        if k > self.kmax {
            return Err(Error::InvalidParameter { name: "kmax", reason: format!("mode {k} exceeds kmax = {}", self.kmax) });
        }
        match k {
            1 if self.symmetric => {
                if hk.is_zero() {
                    Ok(RadialProfile::zeros(self.gs.grid().clone()))
                } else {
                    Err(Error::ModeNotAdmissible { k: 1, reason: "symmetric run with a nonzero mode-1 source".into() })
                }
            }
            1 => solve_mode1(hk, self.gs),
            0 => solve_mode0(hk, &self.pairs[&0]),
            _ => solve_modek_with_pair(hk, &self.pairs[&k]),
        }
    }

    /// `φ = T(h)`, modes solved in parallel.
    pub fn apply(&self, h: &ModeExpansion) -> Result<ModeExpansion> {
        if !h.grid().same_as(self.gs.grid()) {
            return Err(Error::InvalidProfile("source and ground state live on different grids".into()));
        }
        let inputs: Vec<(usize, &RadialProfile)> = h.modes().collect();
        let solved = inputs
            .into_par_iter()
            .map(|(k, hk)| Ok((k, self.solve_mode(k, hk)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut phi = ModeExpansion::new(h.n(), h.kmax().max(self.kmax), h.grid().clone());
        for (k, p) in solved {
            phi.insert(k, p)?;
        }
        Ok(phi)
    }

    /// `T(h)` together with the measured constant and per-mode residuals.
    pub fn apply_with_diagnostics(&self, h: &ModeExpansion) -> Result<TOutput> {
        let phi = self.apply(h)?;
        let e = &self.gs.exponents;
        let mut records = Vec::new();
        for (k, hk) in h.modes() {
            let pk = phi.coefficient(k);
            let lphi = apply_radial_operator(e, k, &pk, &self.gs.profile)?;
            let defect = lphi.combine(1.0, hk, -1.0)?;
            let starstar_in = profile_starstar_norm(hk, &self.cfg);
            let star_out = profile_star_norm(&pk, &self.cfg);
            records.push(ModeRecord {
                k,
                starstar_in,
                star_out,
                residual: profile_starstar_norm(&defect, &self.cfg),
                c_k: ratio(star_out, starstar_in),
            });
        }
        let c_t = ratio(star_norm(&phi, &self.cfg), starstar_norm(h, &self.cfg));
        Ok(TOutput { phi, c_t, records })
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// One-shot `T(h)` with the source's own `kmax`.
pub fn apply_t(h: &ModeExpansion, gs: &GroundState, cfg: &WeightedNormConfig) -> Result<TOutput> {
    RightInverse::new(gs, *cfg, h.kmax(), false)?.apply_with_diagnostics(h)
}

/// `max_r r^{2+σ|m} |L_k φ - h|` for one mode, using the finite-difference operator.
pub fn mode_residual(e: &Exponents, k: usize, phi: &RadialProfile, h: &RadialProfile, gs: &GroundState, cfg: &WeightedNormConfig) -> Result<f64> {
    let lphi = apply_radial_operator(e, k, phi, &gs.profile)?;
    Ok(profile_starstar_norm(&lphi.combine(1.0, h, -1.0)?, cfg))
}

/// `L_k` applied to `-w'` divided by `(n-1-λ_k)/r² (-w')`; equal to one where
/// the supersolution identity holds.
pub fn supersolution_ratio(gs: &GroundState, k: usize) -> Result<Vec<f64>> {
    let e = &gs.exponents;
    let z = gs.translation_kernel()?;
    let lz = apply_radial_operator(e, k, &z, &gs.profile)?;
    let c = e.nf() - 1.0 - mode_eigenvalue(e.n, k);
    Ok((0..z.grid().count())
        .map(|i| {
            let r = z.grid().r_nodes()[i];
            lz.values()[i] * r * r / (c * z.values()[i])
        })
        .collect())
}

/// `C^∞` step: 0 for `x <= 0`, 1 for `x >= 1`, `ψ(x)/(ψ(x)+ψ(1-x))` with `ψ(x) = e^{-1/x}` between.
pub fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a / (a + b)
}

/// Derivative of [`smooth_step`].
pub fn smooth_step_derivative(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a * b * (1.0 / (x * x) + 1.0 / ((1.0 - x) * (1.0 - x))) / ((a + b) * (a + b))
}

/// Names of the fixed test sources used to measure `T`.
pub const REFERENCE_SOURCES: [&str; 10] = [
    "gauss", "exp", "rational", "algebraic", "oscillating", "shifted", "wide", "narrow", "cosine", "ramp",
];

/// The `j`-th reference source for degree `k`, `r^k g_j(r)`, sampled on `grid`.
/// Every member decays at least like `r^{-4}` and is smooth.
pub fn reference_source(grid: &Arc<Grid>, k: usize, j: usize) -> Result<RadialProfile> {
    let kf = k as f64;
    let base: Box<dyn Fn(f64) -> f64> = match j {
        0 => Box::new(|r: f64| (-r * r).exp()),
        1 => Box::new(|r: f64| (-r).exp()),
        2 => Box::new(move |r: f64| 1.0 / (1.0 + r.powf(4.0 + kf))),
        3 => Box::new(move |r: f64| (1.0 + r * r).powf(-(kf + 4.0) / 2.0)),
        4 => Box::new(|r: f64| (2.0 * r).sin() * (-0.5 * r * r).exp()),
        5 => Box::new(|r: f64| (-(r - 2.0) * (r - 2.0)).exp()),
        6 => Box::new(|r: f64| (-r * r / 25.0).exp()),
        7 => Box::new(|r: f64| (-25.0 * r * r).exp()),
        8 => Box::new(move |r: f64| (4.0 * r.ln_1p()).cos() * (1.0 + r * r).powf(-(kf + 4.0) / 2.0)),
        9 => Box::new(move |r: f64| smooth_step((r - 1.0) / 4.0) * r.powf(-4.0 - kf)),
        _ => return Err(Error::InvalidParameter { name: "source", reason: format!("no reference source {j}") }),
    };
    let values = grid.r_nodes().iter().map(|&r| r.powi(k as i32) * base(r)).collect();
    RadialProfile::from_values(grid.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::derive_exponents;
    use crate::fowler::ground_state;
    use crate::radialgrid::build_grid;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn default_gs() -> &'static GroundState {
        static GS: OnceLock<GroundState> = OnceLock::new();
        GS.get_or_init(|| {
            let e = derive_exponents(6, 3.0, None).unwrap();
            ground_state(&e, &build_grid(-12.0, 12.0, 4801).unwrap()).unwrap()
        })
    }

    fn inverse() -> &'static RightInverse<'static> {
        static RI: OnceLock<RightInverse<'static>> = OnceLock::new();
        RI.get_or_init(|| {
            let gs = default_gs();
            RightInverse::new(gs, WeightedNormConfig::new(&gs.exponents), 4, false).unwrap()
        })
    }

    fn cfg() -> WeightedNormConfig {
        WeightedNormConfig::new(&default_gs().exponents)
    }

    fn relative_residual(k: usize, phi: &RadialProfile, h: &RadialProfile) -> f64 {
        let gs = default_gs();
        mode_residual(&gs.exponents, k, phi, h, gs, &cfg()).unwrap() / profile_starstar_norm(h, &cfg())
    }

    fn max_abs_diff(a: &RadialProfile, b: &RadialProfile) -> f64 {
        a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn sup(a: &RadialProfile) -> f64 {
        a.values().iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    #[test]
    fn sigma_range_is_enforced() {
        let e = derive_exponents(6, 3.0, None).unwrap();
        assert!(WeightedNormConfig::with_sigma(&e, 0.0).is_err());
        assert!(WeightedNormConfig::with_sigma(&e, 4.0).is_err());
        assert_eq!(WeightedNormConfig::with_sigma(&e, 2.5).unwrap().sigma, 2.5);
    }

    #[test]
    fn norms_of_pure_powers() {
        let g = build_grid(-6.0, 6.0, 801).unwrap();
        let c = cfg();
        let phi = RadialProfile::from_fn(g.clone(), |r| (1.0 / r, -1.0 / (r * r))).unwrap();
        let x = ModeExpansion::single(6, 0, 0, phi).unwrap();
        assert!((star_norm(&x, &c) - 2.0).abs() < 1e-12);
        let h = RadialProfile::from_fn(g.clone(), |r| (r.powi(-3), -3.0 * r.powi(-4))).unwrap();
        let y = ModeExpansion::single(6, 0, 0, h).unwrap();
        assert!((starstar_norm(&y, &c) - 2.0).abs() < 1e-12);
        assert!((star_norm(&x.scaled(-2.5), &c) - 5.0).abs() < 1e-12);
        assert_eq!(starstar_norm(&ModeExpansion::new(6, 3, g), &c), 0.0);
    }

    #[test]
    fn norms_of_the_ground_state() {
        // r w(r) increases on (0, 1], and far out r w oscillates about √3
        // with a first overshoot of a few percent
        let gs = default_gs();
        let c = cfg();
        let x = ModeExpansion::single(6, 0, 0, gs.profile.clone()).unwrap();
        let parts = star_norm_parts(&x, &c);
        let w1 = gs.w()[gs.grid().nearest(0.0)];
        assert!((parts.inner - w1).abs() < 1e-15);
        let l = 3f64.sqrt();
        assert!(parts.outer > l && parts.outer < 1.1 * l, "{parts:?}");
        let wp = RadialProfile::from_values(gs.grid().clone(), gs.w().iter().map(|w| w.powi(3)).collect()).unwrap();
        let pp = starstar_norm_parts(&ModeExpansion::single(6, 0, 0, wp).unwrap(), &c);
        assert!((pp.outer / parts.outer.powi(3) - 1.0).abs() < 1e-12);
        assert!((pp.inner / w1.powi(3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mode0_pair() {
        let gs = default_gs();
        let pair = inverse().pair(0).unwrap();
        assert!(pair.wronskian_drift() < 1e-8, "{}", pair.wronskian_drift());
        assert!((pair.z_growing.values()[0] - gs.exponents.m).abs() < 1e-9);
        let head = pair.z_decaying.head_exponent();
        assert!((head - (2.0 - 6.0)).abs() < 1e-6, "{head}");
        let lz = apply_radial_operator(&gs.exponents, 0, &pair.z_growing, &gs.profile).unwrap();
        // relative to the size of the potential term it cancels
        let scale = profile_starstar_norm(&pair.z_growing, &cfg());
        assert!(profile_starstar_norm(&lz, &cfg()) < 1e-7 * scale.max(1.0));
    }

    #[test]
    fn recessive_pairs_conserve_the_wronskian() {
        for k in 2..=4 {
            let pair = inverse().pair(k).unwrap();
            assert!(pair.wronskian_drift() < 1e-8, "k = {k}: {}", pair.wronskian_drift());
            assert!(pair.z_growing.values().iter().all(|v| *v > 0.0));
            assert!(pair.z_decaying.values().iter().all(|v| *v > 0.0));
        }
        assert!(homogeneous_modek(default_gs(), 1).is_err());
    }

    #[test]
    fn zero_sources_give_zero() {
        let g = default_gs().grid().clone();
        let z = RadialProfile::zeros(g.clone());
        for k in 0..=3 {
            assert!(inverse().solve_mode(k, &z).unwrap().is_zero());
        }
        let t0 = inverse().apply(&ModeExpansion::new(6, 4, g)).unwrap();
        assert!(t0.is_zero());
    }

    #[test]
    fn round_trips() {
        let gs = default_gs();
        let g = gs.grid().clone();
        let wp = RadialProfile::from_values(g.clone(), gs.w().iter().map(|w| w.powi(3)).collect()).unwrap();
        let phi0 = inverse().solve_mode(0, &wp).unwrap();
        let rr = relative_residual(0, &phi0, &wp);
        assert!(rr < 1e-6, "{rr:e}");
        let h1 = RadialProfile::from_fn(g.clone(), |r| (r * (-r * r).exp(), (1.0 - 2.0 * r * r) * (-r * r).exp())).unwrap();
        let phi1 = solve_mode1(&h1, gs).unwrap();
        assert!(relative_residual(1, &phi1, &h1) < 1e-6);
        let h2 = RadialProfile::from_values(g.clone(), g.r_nodes().iter().map(|r| r * r * (-r * r).exp() / (1.0 + r.powi(4))).collect()).unwrap();
        let phi2 = solve_modek(2, &h2, gs).unwrap();
        assert!(relative_residual(2, &phi2, &h2) < 1e-6);
    }

    #[test]
    fn reference_family_round_trips() {
        let g = default_gs().grid().clone();
        for k in 0..=3 {
            for j in 0..REFERENCE_SOURCES.len() {
                let h = reference_source(&g, k, j).unwrap();
                let phi = inverse().solve_mode(k, &h).unwrap();
                let rel = relative_residual(k, &phi, &h);
                assert!(rel < 1e-6, "k = {k}, {}: {rel:e}", REFERENCE_SOURCES[j]);
            }
        }
        assert!(reference_source(&g, 0, 10).is_err());
    }

    #[test]
    fn mode1_kernel_direction() {
        let gs = default_gs();
        let g = gs.grid().clone();
        let h1 = reference_source(&g, 1, 0).unwrap();
        let phi = solve_mode1(&h1, gs).unwrap();
        let shifted = phi.combine(1.0, &gs.translation_kernel().unwrap(), 1.0).unwrap();
        let a = apply_radial_operator(&gs.exponents, 1, &phi, &gs.profile).unwrap();
        let b = apply_radial_operator(&gs.exponents, 1, &shifted, &gs.profile).unwrap();
        let hn = profile_starstar_norm(&h1, &cfg());
        assert!(profile_starstar_norm(&a.combine(1.0, &b, -1.0).unwrap(), &cfg()) < 1e-7 * hn);
    }

    #[test]
    fn mode1_needs_the_right_regime() {
        let e = derive_exponents(6, 2.2, None).unwrap();
        let gs = ground_state(&e, &build_grid(-8.0, 8.0, 1601).unwrap()).unwrap();
        let h = reference_source(gs.grid(), 1, 0).unwrap();
        assert!(matches!(solve_mode1(&h, &gs), Err(Error::ModeNotAdmissible { k: 1, .. })));
        let ri = RightInverse::new(&gs, WeightedNormConfig::new(&e), 2, true).unwrap();
        assert!(ri.solve_mode(1, &h).is_err());
        assert!(ri.solve_mode(1, &RadialProfile::zeros(gs.grid().clone())).unwrap().is_zero());
        assert!(ri.solve_mode(0, &reference_source(gs.grid(), 0, 0).unwrap()).is_ok());
    }

    #[test]
    fn translation_kernel_is_a_strict_supersolution() {
        let gs = default_gs();
        let z = gs.translation_kernel().unwrap();
        for k in 2..=4 {
            let lz = apply_radial_operator(&gs.exponents, k, &z, &gs.profile).unwrap();
            assert!(lz.values().iter().all(|v| *v < 0.0), "k = {k}");
            let ratio = supersolution_ratio(gs, k).unwrap();
            let worst = ratio[10..ratio.len() - 10].iter().map(|q| (q - 1.0).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-6, "k = {k}: {worst}");
        }
    }

    #[test]
    fn difference_oracle_agrees_for_higher_modes() {
        let gs = default_gs();
        for k in 2..=3 {
            let h = reference_source(gs.grid(), k, 0).unwrap();
            let a = inverse().solve_mode(k, &h).unwrap();
            let b = bvp_modek(k, &h, gs).unwrap();
            assert!(max_abs_diff(&a, &b) < 1e-4 * sup(&a), "k = {k}: {}", max_abs_diff(&a, &b) / sup(&a));
        }
    }

    #[test]
    fn off_grid_sources_are_rejected() {
        let other = build_grid(-12.0, 12.0, 2401).unwrap();
        let h = reference_source(&other, 0, 0).unwrap();
        assert!(inverse().solve_mode(0, &h).is_err());
        assert!(inverse().solve_mode(5, &reference_source(default_gs().grid(), 5, 0).unwrap()).is_err());
    }

    #[test]
    fn diagnostics_and_determinism() {
        let g = default_gs().grid().clone();
        let mut h = ModeExpansion::new(6, 4, g.clone());
        for k in 0..=4 {
            h.insert(k, reference_source(&g, k, 3).unwrap().scaled(0.5f64.powi(k as i32))).unwrap();
        }
        let out = inverse().apply_with_diagnostics(&h).unwrap();
        assert_eq!(out.records.len(), 5);
        for r in &out.records {
            assert!(r.residual <= 1e-6 * r.starstar_in);
            assert!((r.c_k - r.star_out / r.starstar_in).abs() < 1e-15);
        }
        assert!(out.c_t > 0.0);
        let again = inverse().apply(&h).unwrap();
        for k in 0..=4 {
            assert_eq!(again.get(k).unwrap().values(), out.phi.get(k).unwrap().values());
        }
    }

    fn sample_source(seed: &[f64; 4]) -> ModeExpansion {
        let g = default_gs().grid().clone();
        let mut h = ModeExpansion::new(6, 4, g.clone());
        for (k, a) in seed.iter().enumerate() {
            let j = (k * 3 + 1) % REFERENCE_SOURCES.len();
            h.insert(k, reference_source(&g, k, j).unwrap().scaled(*a)).unwrap();
        }
        h
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn t_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, c in prop::array::uniform4(-1.0f64..1.0), d in prop::array::uniform4(-1.0f64..1.0)) {
            let (h, q) = (sample_source(&c), sample_source(&d));
            let t = inverse();
            let lhs = t.apply(&h.combine(a, &q, b).unwrap()).unwrap();
            let rhs = t.apply(&h).unwrap().combine(a, &t.apply(&q).unwrap(), b).unwrap();
            let scale = star_norm(&rhs, &cfg()).max(star_norm(&lhs, &cfg()));
            let diff = star_norm(&lhs.combine(1.0, &rhs, -1.0).unwrap(), &cfg());
            prop_assert!(diff <= 1e-12 * scale.max(1e-300), "{diff:e} vs {scale:e}");
        }

        #[test]
        fn norms_are_homogeneous(a in -5.0f64..5.0, c in prop::array::uniform4(-1.0f64..1.0)) {
            let h = sample_source(&c);
            let n0 = starstar_norm(&h, &cfg());
            prop_assert!((starstar_norm(&h.scaled(a), &cfg()) - a.abs() * n0).abs() <= 1e-14 * n0.max(1.0));
            prop_assert!((star_norm(&h.scaled(a), &cfg()) - a.abs() * star_norm(&h, &cfg())).abs() <= 1e-14 * n0.max(1.0));
        }
    }
}
