//! Uniform grids in `s = log r`, radial profiles, quadrature and the discrete
//! mode-`k` radial operator.

use std::sync::Arc;

use crate::constants::{mode_eigenvalue, Exponents};
use crate::error::{Error, Result};

pub const MIN_NODES: usize = 64;
pub const CSV_HEADER: &str = "s,r,value,derivative";

/// Uniform grid in `s = log r`.
#[derive(Debug, Clone)]
pub struct Grid {
    s_min: f64,
    s_max: f64,
    count: usize,
    step: f64,
    nodes: Vec<f64>,
    r_nodes: Vec<f64>,
}

pub fn build_grid(s_min: f64, s_max: f64, count: usize) -> Result<Arc<Grid>> {
    if !(s_min.is_finite() && s_max.is_finite()) || s_min >= s_max {
        return Err(Error::InvalidGrid(format!("inverted or empty range [{s_min}, {s_max}]")));
    }
    if count < MIN_NODES {
        return Err(Error::InvalidGrid(format!("count {count} < {MIN_NODES}")));
    }
    let step = (s_max - s_min) / (count - 1) as f64;
    let nodes: Vec<f64> = (0..count)
        .map(|i| if i + 1 == count { s_max } else { s_min + i as f64 * step })
        .collect();
    let r_nodes = nodes.iter().map(|s| s.exp()).collect();
    Ok(Arc::new(Grid { s_min, s_max, count, step, nodes, r_nodes }))
}

impl Grid {
    pub fn s_min(&self) -> f64 {
        self.s_min
    }
    pub fn s_max(&self) -> f64 {
        self.s_max
    }
    pub fn count(&self) -> usize {
        self.count
    }
    pub fn step(&self) -> f64 {
        self.step
    }
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn r_nodes(&self) -> &[f64] {
        &self.r_nodes
    }
    pub fn r_min(&self) -> f64 {
        self.r_nodes[0]
    }
    pub fn r_max(&self) -> f64 {
        self.r_nodes[self.count - 1]
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.s_min == other.s_min && self.s_max == other.s_max && self.count == other.count
    }

    /// Index of the node closest to `s`, clamped to the grid.
    pub fn nearest(&self, s: f64) -> usize {
        let x = ((s - self.s_min) / self.step).round();
        x.clamp(0.0, (self.count - 1) as f64) as usize
    }

    /// Interval index `i` and fraction `t in [0,1]` with `s = nodes[i] + t * step`.
    pub fn locate(&self, s: f64) -> (usize, f64) {
        let x = (s - self.s_min) / self.step;
        let i = (x.floor().max(0.0) as usize).min(self.count - 2);
        (i, x - i as f64)
    }
}

/// A radial function sampled on a grid, with its `d/dr` derivative.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    grid: Arc<Grid>,
    values: Vec<f64>,
    derivative: Vec<f64>,
    head_exponent: f64,
    tail_exponent: f64,
}

fn log_slope(r: f64, f: f64, df: f64) -> f64 {
    if f == 0.0 {
        return 0.0;
    }
    let a = r * df / f;
    if a.is_finite() {
        a
    } else {
        0.0
    }
}

impl RadialProfile {
    /// Builds a profile; power-law exponents at both ends are read off the
    /// logarithmic derivative at the end nodes.
    pub fn new(grid: Arc<Grid>, values: Vec<f64>, derivative: Vec<f64>) -> Result<Self> {
        if values.len() != grid.count || derivative.len() != grid.count {
            return Err(Error::InvalidProfile(format!(
                "lengths {}/{} vs grid {}",
                values.len(),
                derivative.len(),
                grid.count
            )));
        }
        if let Some(i) = values.iter().chain(&derivative).position(|v| !v.is_finite()) {
            return Err(Error::InvalidProfile(format!("non-finite sample at position {}", i % grid.count)));
        }
        let last = grid.count - 1;
        let head_exponent = log_slope(grid.r_nodes[0], values[0], derivative[0]);
        let tail_exponent = log_slope(grid.r_nodes[last], values[last], derivative[last]);
        Ok(Self { grid, values, derivative, head_exponent, tail_exponent })
    }

    /// Samples values only; the derivative is formed by finite differences.
    pub fn from_values(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        let ds = d_ds(grid.step, &values);
        let derivative = ds.iter().zip(&grid.r_nodes).map(|(d, r)| d / r).collect();
        Self::new(grid, values, derivative)
    }

    /// Samples a closed form returning `(f(r), f'(r))`.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64) -> (f64, f64)) -> Result<Self> {
        let (values, derivative) = grid.r_nodes.iter().map(|&r| f(r)).unzip();
        Self::new(grid, values, derivative)
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.count;
        Self { grid, values: vec![0.0; n], derivative: vec![0.0; n], head_exponent: 0.0, tail_exponent: 0.0 }
    }

    pub fn with_exponents(mut self, head: f64, tail: f64) -> Self {
        self.head_exponent = head;
        self.tail_exponent = tail;
        self
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn derivative(&self) -> &[f64] {
        &self.derivative
    }
    pub fn head_exponent(&self) -> f64 {
        self.head_exponent
    }
    pub fn tail_exponent(&self) -> f64 {
        self.tail_exponent
    }

    /// Derivative with respect to `s`, i.e. `r f'(r)`.
    pub fn s_derivative(&self) -> Vec<f64> {
        self.derivative.iter().zip(&self.grid.r_nodes).map(|(d, r)| d * r).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| a * v).collect(),
            derivative: self.derivative.iter().map(|v| a * v).collect(),
            head_exponent: self.head_exponent,
            tail_exponent: self.tail_exponent,
        }
    }

    /// `a * self + b * other`; exponents are re-estimated from the result.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::InvalidProfile("profiles live on different grids".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        let derivative = self.derivative.iter().zip(&other.derivative).map(|(x, y)| a * x + b * y).collect();
        Self::new(self.grid.clone(), values, derivative)
    }

    /// Cubic Hermite interpolation in `s`; outside the grid the end power laws
    /// are continued.
    pub fn eval(&self, r: f64) -> f64 {
        self.eval_with_derivative(r).0
    }

    pub fn eval_with_derivative(&self, r: f64) -> (f64, f64) {
        let g = &self.grid;
        let s = r.ln();
        let last = g.count - 1;
        if s <= g.s_min {
            let (r0, f0) = (g.r_nodes[0], self.values[0]);
            let a = self.head_exponent;
            let f = f0 * (r / r0).powf(a);
            return (f, a * f / r);
        }
        if s >= g.s_max {
            let (r1, f1) = (g.r_nodes[last], self.values[last]);
            let a = self.tail_exponent;
            let f = f1 * (r / r1).powf(a);
            return (f, a * f / r);
        }
        let (i, t) = g.locate(s);
        let h = g.step;
        let (f0, f1) = (self.values[i], self.values[i + 1]);
        let d0 = self.derivative[i] * g.r_nodes[i] * h;
        let d1 = self.derivative[i + 1] * g.r_nodes[i + 1] * h;
        let t2 = t * t;
        let t3 = t2 * t;
        let f = (2.0 * t3 - 3.0 * t2 + 1.0) * f0
            + (t3 - 2.0 * t2 + t) * d0
            + (-2.0 * t3 + 3.0 * t2) * f1
            + (t3 - t2) * d1;
        let fs = ((6.0 * t2 - 6.0 * t) * f0 + (3.0 * t2 - 4.0 * t + 1.0) * d0 + (-6.0 * t2 + 6.0 * t) * f1
            + (3.0 * t2 - 2.0 * t) * d1)
            / h;
        (f, fs / r)
    }

    /// Resamples `r -> self(c * r)` onto the same grid.
    pub fn dilate(&self, c: f64) -> Result<Self> {
        let (values, derivative) = self
            .grid
            .r_nodes
            .iter()
            .map(|&r| {
                let (f, df) = self.eval_with_derivative(c * r);
                (f, c * df)
            })
            .unzip();
        Ok(Self::new(self.grid.clone(), values, derivative)?.with_exponents(self.head_exponent, self.tail_exponent))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.grid.count * 80);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for i in 0..self.grid.count {
            out.push_str(&format!(
                "{:e},{:e},{:e},{:e}\n",
                self.grid.nodes[i], self.grid.r_nodes[i], self.values[i], self.derivative[i]
            ));
        }
        out
    }

    pub fn from_csv(grid: Arc<Grid>, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CSV_HEADER) {
            return Err(Error::InvalidProfile(format!("missing header `{CSV_HEADER}`")));
        }
        let mut values = Vec::with_capacity(grid.count);
        let mut derivative = Vec::with_capacity(grid.count);
        for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidProfile(format!("line {}: {e}", i + 2)))?;
            if cols.len() != 4 {
                return Err(Error::InvalidProfile(format!("line {}: expected 4 columns", i + 2)));
            }
            match grid.nodes.get(i) {
                Some(s) if (s - cols[0]).abs() <= 1e-12 * s.abs().max(1.0) => {}
                _ => return Err(Error::InvalidProfile(format!("line {}: node does not match grid", i + 2))),
            }
            values.push(cols[2]);
            derivative.push(cols[3]);
        }
        Self::new(grid, values, derivative)
    }
}

/// Fourth-order first derivative on a uniform grid (one-sided at the ends).
pub fn d_ds(h: f64, f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    let c = 1.0 / (12.0 * h);
    for i in 2..n - 2 {
        d[i] = (-f[i + 2] + 8.0 * f[i + 1] - 8.0 * f[i - 1] + f[i - 2]) * c;
    }
    d[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) * c;
    d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) * c;
    d[n - 1] = (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4] + 3.0 * f[n - 5]) * c;
    d[n - 2] = (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4] - f[n - 5]) * c;
    d
}

/// Fourth-order second derivative on a uniform grid (six-point one-sided at the ends).
pub fn d2_ds2(h: f64, f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    let c = 1.0 / (12.0 * h * h);
    for i in 2..n - 2 {
        d[i] = (-f[i + 2] + 16.0 * f[i + 1] - 30.0 * f[i] + 16.0 * f[i - 1] - f[i - 2]) * c;
    }
    let e0 = [45.0, -154.0, 214.0, -156.0, 61.0, -10.0];
    let e1 = [10.0, -15.0, -4.0, 14.0, -6.0, 1.0];
    d[0] = (0..6).map(|j| e0[j] * f[j]).sum::<f64>() * c;
    d[1] = (0..6).map(|j| e1[j] * f[j]).sum::<f64>() * c;
    d[n - 1] = (0..6).map(|j| e0[j] * f[n - 1 - j]).sum::<f64>() * c;
    d[n - 2] = (0..6).map(|j| e1[j] * f[n - 1 - j]).sum::<f64>() * c;
    d
}

/// The mode-`k` Laplacian `φ'' + (n-1)/r φ' - λ_k/r² φ`, by finite differences in `s`.
pub fn mode_laplacian(n: u32, k: usize, phi: &RadialProfile) -> Vec<f64> {
    let g = &phi.grid;
    let fs = d_ds(g.step, &phi.values);
    let fss = d2_ds2(g.step, &phi.values);
    let lam = mode_eigenvalue(n, k);
    let nm2 = n as f64 - 2.0;
    (0..g.count)
        .map(|i| (fss[i] + nm2 * fs[i] - lam * phi.values[i]) / (g.r_nodes[i] * g.r_nodes[i]))
        .collect()
}

/// `L_k φ = φ'' + (n-1)/r φ' + (p w^{p-1} - λ_k/r²) φ` evaluated on the grid.
pub fn apply_radial_operator(e: &Exponents, k: usize, phi: &RadialProfile, wprof: &RadialProfile) -> Result<RadialProfile> {
    if !phi.grid.same_as(&wprof.grid) {
        return Err(Error::InvalidProfile("phi and w live on different grids".into()));
    }
    if wprof.values.iter().any(|w| *w <= 0.0) {
        return Err(Error::InvalidProfile("ground state must be positive".into()));
    }
    let lap = mode_laplacian(e.n, k, phi);
    let values: Vec<f64> = lap
        .iter()
        .zip(phi.values.iter().zip(&wprof.values))
        .map(|(l, (f, w))| l + e.p * w.powf(e.p - 1.0) * f)
        .collect();
    RadialProfile::from_values(phi.grid.clone(), values)
}

/// Integral over each grid interval of samples given in `s`, by the
/// four-point cubic rule (one-sided on the first and last interval).
pub fn interval_pieces(h: f64, f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let c = h / 24.0;
    let mut out = vec![0.0; n - 1];
    out[0] = c * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3]);
    for i in 1..n - 2 {
        out[i] = c * (-f[i - 1] + 13.0 * f[i] + 13.0 * f[i + 1] - f[i + 2]);
    }
    out[n - 2] = c * (f[n - 4] - 5.0 * f[n - 3] + 19.0 * f[n - 2] + 9.0 * f[n - 1]);
    out
}

/// `∫_{s_anchor}^{s_i}` for every node, accumulated outward from the anchor.
pub fn anchored_integral(pieces: &[f64], anchor: usize) -> Vec<f64> {
    let n = pieces.len() + 1;
    let mut out = vec![0.0; n];
    for i in anchor + 1..n {
        out[i] = out[i - 1] + pieces[i - 1];
    }
    for i in (0..anchor).rev() {
        out[i] = out[i + 1] - pieces[i];
    }
    out
}

/// Cumulative integrals of samples given in `s`, with optional exponential
/// continuation beyond either end at the given rates (`F ~ e^{rate s}`).
pub fn integrate_in_s(h: f64, f: &[f64], head_rate: Option<f64>, tail_rate: Option<f64>) -> Result<CumulativeIntegrals> {
    let n = f.len();
    let head_extension = match head_rate {
        Some(_) if f[0] == 0.0 => 0.0,
        Some(k) if k > 0.0 => f[0] / k,
        Some(k) => return Err(Error::NonIntegrable { endpoint: "head", exponent: k }),
        None => 0.0,
    };
    let tail_extension = match tail_rate {
        Some(_) if f[n - 1] == 0.0 => 0.0,
        Some(k) if k < 0.0 => -f[n - 1] / k,
        Some(k) => return Err(Error::NonIntegrable { endpoint: "tail", exponent: k }),
        None => 0.0,
    };
    let pieces = interval_pieces(h, f);
    let mut from_left = vec![0.0; n];
    from_left[0] = head_extension;
    for i in 1..n {
        from_left[i] = from_left[i - 1] + pieces[i - 1];
    }
    let mut from_right = vec![0.0; n];
    from_right[n - 1] = tail_extension;
    for i in (0..n - 1).rev() {
        from_right[i] = from_right[i + 1] + pieces[i];
    }
    Ok(CumulativeIntegrals { from_left, from_right, head_extension, tail_extension })
}

#[derive(Debug, Clone)]
pub struct CumulativeIntegrals {
    /// `∫_0^{r_i}` (or from the first node when no head extension was requested).
    pub from_left: Vec<f64>,
    /// `∫_{r_i}^∞` (or up to the last node), indexed by node.
    pub from_right: Vec<f64>,
    pub head_extension: f64,
    pub tail_extension: f64,
}

impl CumulativeIntegrals {
    pub fn total(&self) -> f64 {
        self.from_left[0] + self.from_right[0]
    }
}

/// Cumulative integrals of `f(r) r^{weight_power} dr`. `head_exponent` (the
/// power of `f` at 0) requests the continuation down to `r = 0`, and
/// `tail_exponent` the continuation to infinity.
pub fn cumulative_integrals(
    grid: &Grid,
    samples: &[f64],
    weight_power: f64,
    head_exponent: Option<f64>,
    tail_exponent: Option<f64>,
) -> Result<CumulativeIntegrals> {
    if samples.len() != grid.count {
        return Err(Error::InvalidProfile("sample count does not match grid".into()));
    }
    let f: Vec<f64> = samples
        .iter()
        .zip(&grid.nodes)
        .map(|(v, s)| v * ((weight_power + 1.0) * s).exp())
        .collect();
    integrate_in_s(
        grid.step,
        &f,
        head_exponent.map(|a| a + weight_power + 1.0),
        tail_exponent.map(|a| a + weight_power + 1.0),
    )
}
