//! Run configuration: defaults, then a `key = value` file, then command-line flags.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use supercrit::fixedpoint::{SolveConfig, SourceSpec};
use supercrit::linop::REFERENCE_SOURCES;
use supercrit::radialgrid::MIN_NODES;
use supercrit::{build_grid, derive_exponents, Exponents, Grid};

#[derive(Debug, Error)]
#[error("invalid config key `{key}`: {reason}")]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

fn bad(key: &str, reason: impl ToString) -> ConfigError {
    ConfigError { key: key.to_string(), reason: reason.to_string() }
}

/// One term `amplitude · reference_source(k, kind)` of a `linsolve` source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceTerm {
    pub k: usize,
    pub kind: String,
    pub amplitude: f64,
}

impl SourceTerm {
    pub fn index(&self) -> usize {
        REFERENCE_SOURCES.iter().position(|s| *s == self.kind).expect("validated")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub n: u32,
    pub p: f64,
    pub sigma: Option<f64>,
    pub smin: f64,
    pub smax: f64,
    pub points: usize,
    pub kmax: usize,
    pub mu: f64,
    pub r1: f64,
    pub modes: BTreeMap<usize, f64>,
    pub lambda: f64,
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub symmetric: bool,
    pub residual_tol: f64,
    pub lambdas: Vec<f64>,
    pub source: Vec<SourceTerm>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solve = SolveConfig::default();
        Self {
            n: 6,
            p: 3.0,
            sigma: None,
            smin: -12.0,
            smax: 12.0,
            points: 4801,
            kmax: solve.kmax,
            mu: 4.0,
            r1: 20.0,
            modes: BTreeMap::from([(0, 1.0)]),
            lambda: solve.lambda,
            rho: solve.rho,
            tol: solve.tol,
            max_iter: solve.max_iter,
            symmetric: solve.symmetric,
            residual_tol: 1e-6,
            lambdas: Vec::new(),
            source: vec![SourceTerm { k: 0, kind: "gauss".into(), amplitude: 1.0 }],
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse::<T>().map_err(|e| bad(key, format!("cannot parse `{v}`: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(bad(key, format!("expected true or false, got `{other}`"))),
    }
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|t| !t.is_empty())
}

/// `"0:1,2:0.25"`
pub fn parse_modes(key: &str, v: &str) -> Result<BTreeMap<usize, f64>, ConfigError> {
    let mut out = BTreeMap::new();
    for item in split_list(v) {
        let (k, a) = item.split_once(':').ok_or_else(|| bad(key, format!("expected k:amplitude, got `{item}`")))?;
        if out.insert(parse_num::<usize>(key, k)?, parse_num::<f64>(key, a)?).is_some() {
            return Err(bad(key, format!("mode {k} given twice")));
        }
    }
    Ok(out)
}

pub fn parse_lambdas(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    split_list(v).map(|t| parse_num::<f64>(key, t)).collect()
}

/// `"k:kind:amplitude,..."`, amplitude optional.
pub fn parse_source(key: &str, v: &str) -> Result<Vec<SourceTerm>, ConfigError> {
    split_list(v)
        .map(|item| {
            let parts: Vec<&str> = item.split(':').map(str::trim).collect();
            let (k, kind, amp) = match parts.as_slice() {
                [k, kind] => (*k, *kind, "1"),
                [k, kind, a] => (*k, *kind, *a),
                _ => return Err(bad(key, format!("expected k:kind[:amplitude], got `{item}`"))),
            };
            if !REFERENCE_SOURCES.contains(&kind) {
                return Err(bad(key, format!("unknown source kind `{kind}` (one of {})", REFERENCE_SOURCES.join(", "))));
            }
            Ok(SourceTerm { k: parse_num(key, k)?, kind: kind.to_string(), amplitude: parse_num(key, amp)? })
        })
        .collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        match k {
            "n" => self.n = parse_num(k, value)?,
            "p" => self.p = parse_num(k, value)?,
            "sigma" => self.sigma = Some(parse_num(k, value)?),
            "smin" => self.smin = parse_num(k, value)?,
            "smax" => self.smax = parse_num(k, value)?,
            "points" => self.points = parse_num(k, value)?,
            "kmax" => self.kmax = parse_num(k, value)?,
            "mu" => self.mu = parse_num(k, value)?,
            "r1" => self.r1 = parse_num(k, value)?,
            "modes" => self.modes = parse_modes(k, value)?,
            "lambda" => self.lambda = parse_num(k, value)?,
            "rho" => self.rho = parse_num(k, value)?,
            "tol" => self.tol = parse_num(k, value)?,
            "max_iter" => self.max_iter = parse_num(k, value)?,
            "symmetric" => self.symmetric = parse_bool(k, value)?,
            "residual_tol" => self.residual_tol = parse_num(k, value)?,
            "lambdas" => self.lambdas = parse_lambdas(k, value)?,
            "source" => self.source = parse_source(k, value)?,
            _ => return Err(bad(k, "unknown key")),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad("config", format!("{}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad("config", format!("{}:{}: expected key = value", path.display(), lineno + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn exponents(&self) -> Result<Exponents, ConfigError> {
        derive_exponents(self.n, self.p, self.sigma).map_err(|e| {
            let key = match &e {
                supercrit::Error::Dimension(_) => "n",
                supercrit::Error::InvalidParameter { name, .. } => name,
                _ => "p",
            };
            bad(key, e)
        })
    }

    pub fn grid(&self) -> Result<Arc<Grid>, ConfigError> {
        if !self.smin.is_finite() {
            return Err(bad("smin", format!("not finite: {}", self.smin)));
        }
        if !(self.smax.is_finite() && self.smax > self.smin) {
            return Err(bad("smax", format!("need smax > smin = {}, got {}", self.smin, self.smax)));
        }
        if self.points < MIN_NODES {
            return Err(bad("points", format!("need at least {MIN_NODES} nodes, got {}", self.points)));
        }
        build_grid(self.smin, self.smax, self.points).map_err(|e| bad("points", e))
    }

    pub fn source_spec(&self, e: &Exponents) -> Result<SourceSpec, ConfigError> {
        let src = SourceSpec { mu: self.mu, r1: self.r1, modes: self.modes.clone() };
        src.validate(e).map_err(|err| match err {
            supercrit::Error::InvalidParameter { name, .. } => bad(name, err),
            other => bad("modes", other),
        })?;
        if self.symmetric && src.modes.get(&1).is_some_and(|a| *a != 0.0) {
            return Err(bad("modes", "a symmetric run cannot carry a mode-1 source"));
        }
        if !e.regime().admits_mode1() && !self.symmetric {
            return Err(bad("symmetric", format!("regime {} requires a symmetric run", e.regime())));
        }
        Ok(src)
    }

    pub fn solve_config(&self, lambda: f64) -> Result<SolveConfig, ConfigError> {
        let cfg = SolveConfig {
            lambda,
            rho: self.rho,
            tol: self.tol,
            max_iter: self.max_iter,
            symmetric: self.symmetric,
            kmax: self.kmax,
        };
        cfg.validate().map_err(|err| match err {
            supercrit::Error::InvalidParameter { name, .. } => bad(name, err),
            other => bad("lambda", other),
        })?;
        Ok(cfg)
    }

    fn check_residual_tol(&self) -> Result<(), ConfigError> {
        if !(self.residual_tol > 0.0 && self.residual_tol.is_finite()) {
            return Err(bad("residual_tol", format!("need residual_tol > 0, got {}", self.residual_tol)));
        }
        Ok(())
    }

    /// The rescaled source has to start inside the grid.
    fn check_scale_fits(&self, lambda: f64, grid: &Grid, key: &str) -> Result<(), ConfigError> {
        let start = lambda * self.r1;
        if grid.r_min() * std::f64::consts::E > start {
            return Err(bad(key, format!("rescaled cutoff λ·r1 = {start:e} lies below the grid (r_min = {:e})", grid.r_min())));
        }
        Ok(())
    }

    pub fn validate_solve(&self) -> Result<Validated, ConfigError> {
        let exponents = self.exponents()?;
        let grid = self.grid()?;
        let source = self.source_spec(&exponents)?;
        let solve = self.solve_config(self.lambda)?;
        self.check_residual_tol()?;
        self.check_scale_fits(self.lambda, &grid, "lambda")?;
        Ok(Validated { exponents, grid, source, solve })
    }

    /// Deduplicated `lambdas`, plus the values that were dropped.
    pub fn validate_sweep(&self) -> Result<(Validated, Vec<f64>, Vec<f64>), ConfigError> {
        if self.lambdas.is_empty() {
            return Err(bad("lambdas", "empty list"));
        }
        let v = self.validate_solve()?;
        let mut unique: Vec<f64> = Vec::new();
        let mut dropped = Vec::new();
        for &l in &self.lambdas {
            self.solve_config(l).map_err(|e| bad("lambdas", e.reason))?;
            self.check_scale_fits(l, &v.grid, "lambdas")?;
            if unique.contains(&l) {
                dropped.push(l);
            } else {
                unique.push(l);
            }
        }
        Ok((v, unique, dropped))
    }

    pub fn validate_linsolve(&self) -> Result<(Exponents, Arc<Grid>, usize), ConfigError> {
        let exponents = self.exponents()?;
        let grid = self.grid()?;
        if self.source.is_empty() {
            return Err(bad("source", "empty source"));
        }
        if let Some(t) = self.source.iter().find(|t| !t.amplitude.is_finite()) {
            return Err(bad("source", format!("non-finite amplitude for mode {}", t.k)));
        }
        if self.source.iter().any(|t| t.k == 1 && t.amplitude != 0.0) {
            if self.symmetric {
                return Err(bad("source", "a symmetric run cannot carry a mode-1 source"));
            }
            if !exponents.regime().admits_mode1() {
                return Err(bad("source", format!("mode 1 is not invertible in regime {}", exponents.regime())));
            }
        }
        let kmax = self.source.iter().map(|t| t.k).max().unwrap_or(0).max(self.kmax);
        Ok((exponents, grid, kmax))
    }
}

pub struct Validated {
    pub exponents: Exponents,
    pub grid: Arc<Grid>,
    pub source: SourceSpec,
    pub solve: SolveConfig,
}
