//! Exponent algebra for the supercritical problem `Δu + u^p + f = 0` in `R^n`.

use serde::Serialize;

use crate::error::{Error, Result};

/// All closed-form constants derived from a problem instance `(n, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Exponents {
    pub n: u32,
    pub p: f64,
    /// Decay power of the ground state, `2/(p-1)`.
    pub m: f64,
    /// Damping coefficient of the Fowler ODE, `n - 2 - 4/(p-1)`.
    pub alpha: f64,
    /// Linear coefficient of the Fowler ODE, `m (n - 2 - m)`.
    pub beta: f64,
    /// Far-field amplitude, `beta^{1/(p-1)}`.
    pub l: f64,
    /// Sobolev exponent `(n+2)/(n-2)`.
    pub p_sobolev: f64,
    /// Threshold `(n+1)/(n-3)` above which the mode-1 inverse exists.
    pub p_mode1: f64,
    /// Joseph-Lundgren exponent, `+inf` for `n <= 10`.
    pub p_jl: f64,
    /// Larger root used for far-field decay rates; `None` when the discriminant is negative.
    pub lambda2: Option<f64>,
    /// Inner weight exponent of the weighted norms.
    pub sigma: f64,
}

/// Which part of the existence theory an instance falls under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `p > (n+1)/(n-3)`, below the Joseph-Lundgren exponent.
    Mode1Ok,
    /// `(n+2)/(n-2) < p <= (n+1)/(n-3)`: the source must be axis-symmetric.
    SymmetricRequired,
    /// `p >= p_c`; the mode-1 inverse is still available.
    AboveJosephLundgren,
}

impl Regime {
    pub fn admits_mode1(self) -> bool {
        !matches!(self, Regime::SymmetricRequired)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Mode1Ok => "mode1_ok",
            Regime::SymmetricRequired => "symmetric_required",
            Regime::AboveJosephLundgren => "above_joseph_lundgren",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Joseph-Lundgren exponent for dimension `n`.
pub fn joseph_lundgren(n: u32) -> f64 {
    if n <= 10 {
        return f64::INFINITY;
    }
    let nf = n as f64;
    let num = (nf - 2.0).powi(2) - 4.0 * nf + 4.0 * (nf * nf - (nf - 2.0).powi(2)).sqrt();
    num / ((nf - 2.0) * (nf - 10.0))
}

/// Builds the full set of exponents, validating `n >= 4` and `p > (n+2)/(n-2)`.
pub fn derive_exponents(n: u32, p: f64, sigma_override: Option<f64>) -> Result<Exponents> {
    if n < 4 {
        return Err(Error::Dimension(n));
    }
    let nf = n as f64;
    let p_sobolev = (nf + 2.0) / (nf - 2.0);
    if !p.is_finite() || p <= p_sobolev {
        return Err(Error::Subcritical { p, threshold: p_sobolev });
    }
    let m = 2.0 / (p - 1.0);
    let alpha = nf - 2.0 - 2.0 * m;
    let beta = m * (nf - 2.0 - m);
    let l = beta.powf(1.0 / (p - 1.0));
    let disc = alpha * alpha - 8.0 * (nf - 2.0 - m);
    let lambda2 = (disc >= 0.0).then(|| 0.5 * (alpha + disc.sqrt()));
    let sigma = match sigma_override {
        Some(s) if !(s > 0.0 && s < nf - 2.0) => {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: format!("need 0 < sigma < n - 2 = {}, got {s}", nf - 2.0),
            })
        }
        Some(s) => s,
        None => m,
    };
    Ok(Exponents {
        n,
        p,
        m,
        alpha,
        beta,
        l,
        p_sobolev,
        p_mode1: (nf + 1.0) / (nf - 3.0),
        p_jl: joseph_lundgren(n),
        lambda2,
        sigma,
    })
}

pub fn classify_regime(e: &Exponents) -> Regime {
    if e.p >= e.p_jl {
        Regime::AboveJosephLundgren
    } else if e.p > e.p_mode1 {
        Regime::Mode1Ok
    } else {
        Regime::SymmetricRequired
    }
}

/// Eigenvalue `k(n-2+k)` of `-Δ` on `S^{n-1}` for harmonics of degree `k`.
pub fn mode_eigenvalue(n: u32, k: usize) -> f64 {
    let k = k as f64;
    k * (n as f64 - 2.0 + k)
}

impl Exponents {
    pub fn nf(&self) -> f64 {
        self.n as f64
    }

    pub fn regime(&self) -> Regime {
        classify_regime(self)
    }

    /// Equilibrium of the Fowler ODE, `beta^{1/(p-1)}` (equal to `l`).
    pub fn equilibrium(&self) -> f64 {
        self.l
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma < self.nf() - 2.0) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: format!("need 0 < sigma < n - 2, got {sigma}"),
            });
        }
        self.sigma = sigma;
        Ok(self)
    }
}
