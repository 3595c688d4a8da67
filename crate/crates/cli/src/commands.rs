//! The subcommands. Each returns the process exit code.

use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use rayon::prelude::*;
use serde::Serialize;

use supercrit::fixedpoint::{rescaled_source, solve as run_solve, verify_solution, SolveReport, SolveRun};
use supercrit::fowler::GroundState;
use supercrit::linop::{reference_source, ModeExpansion, ModeRecord, RightInverse, WeightedNormConfig};
use supercrit::RadialProfile;

use crate::config::RunConfig;
use crate::store::{jsonl, load_ground_state, now, write_atomic, Record};
use crate::{core_code, failure_code};

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub cache: Option<PathBuf>,
}

impl Context {
    fn ground_state(&self, e: &supercrit::Exponents, g: &std::sync::Arc<supercrit::Grid>) -> Result<GroundState> {
        let (gs, status) = load_ground_state(e, g, self.cache.as_deref())?;
        eprintln!("ground state cache: {}", status.as_str());
        Ok(gs)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".to_string(), |v| v.to_string())
}

pub fn exponents(ctx: &Context) -> Result<i32> {
    let e = ctx.cfg.exponents()?;
    let rows = [
        ("n", e.n.to_string()),
        ("p", e.p.to_string()),
        ("m", e.m.to_string()),
        ("alpha", e.alpha.to_string()),
        ("beta", e.beta.to_string()),
        ("L", e.l.to_string()),
        ("sigma", e.sigma.to_string()),
        ("p_sobolev", e.p_sobolev.to_string()),
        ("p_mode1", e.p_mode1.to_string()),
        ("p_c", e.p_jl.to_string()),
        ("lambda2", fmt_opt(e.lambda2)),
        ("regime", e.regime().to_string()),
    ];
    for (k, v) in rows {
        println!("{k:<10} {v}");
    }
    Ok(0)
}

pub fn ground_state(ctx: &Context) -> Result<i32> {
    let e = ctx.cfg.exponents()?;
    let g = ctx.cfg.grid()?;
    let gs = ctx.ground_state(&e, &g)?;
    let path = ctx.path("ground_state.csv");
    write_atomic(&path, gs.profile.to_csv().as_bytes())?;
    println!(
        "n={} p={} L={} L_measured={} rel_error={:.3e} max_weighted_residual={:.3e} -> {}",
        e.n,
        e.p,
        e.l,
        gs.l_measured,
        (gs.l_measured - e.l).abs() / e.l,
        gs.weighted_residual(),
        path.display()
    );
    Ok(0)
}

fn write_modes(ctx: &Context, prefix: &str, phi: &ModeExpansion) -> Result<()> {
    for (k, profile) in phi.modes() {
        write_atomic(&ctx.path(&format!("{prefix}_k{k}.csv")), profile.to_csv().as_bytes())?;
    }
    Ok(())
}

pub fn linsolve(ctx: &Context) -> Result<i32> {
    let cfg = &ctx.cfg;
    let (e, g, kmax) = cfg.validate_linsolve()?;
    let gs = ctx.ground_state(&e, &g)?;
    let mut h = ModeExpansion::new(e.n, kmax, g.clone());
    for term in &cfg.source {
        let base = reference_source(&g, term.k, term.index())?;
        let sum = h.coefficient(term.k).combine(1.0, &base, term.amplitude)?;
        h.insert(term.k, sum)?;
    }
    let t = RightInverse::new(&gs, WeightedNormConfig::new(&e), kmax, cfg.symmetric)?;
    let out = t.apply_with_diagnostics(&h)?;
    write_modes(ctx, "linsolve_phi", &out.phi)?;
    let timestamp = now();
    let mut code = 0;
    let records: Vec<Record<&ModeRecord>> = out
        .records
        .iter()
        .map(|r| {
            let ok = r.residual <= cfg.residual_tol * r.starstar_in;
            if !ok {
                code = 6;
            }
            println!(
                "k={} ‖h‖**={:.4e} ‖φ‖*={:.4e} residual={:.3e} C_k={:.4e}",
                r.k, r.starstar_in, r.star_out, r.residual, r.c_k
            );
            Record {
                timestamp,
                command: "linsolve",
                exit_code: if ok { 0 } else { 6 },
                error: (!ok).then(|| "residual above residual_tol relative to the source".to_string()),
                body: r,
            }
        })
        .collect();
    write_atomic(&ctx.path("linsolve.jsonl"), jsonl(&records)?.as_bytes())?;
    println!("C_T={:.4e}", out.c_t);
    Ok(code)
}

#[derive(Serialize)]
struct SolveBody<'a> {
    config: &'a RunConfig,
    report: Option<&'a SolveReport>,
}

/// Exit code and reason for a finished run.
fn classify(report: &SolveReport, residual_tol: f64) -> (i32, Option<String>) {
    if let Some(f) = &report.failure {
        return (failure_code(f), Some(f.to_string()));
    }
    if let Some(r) = report.contraction_ratios.iter().find(|r| **r >= 1.0) {
        return (4, Some(format!("contraction ratio {r} >= 1")));
    }
    if !report.positivity_ok {
        return (6, Some(format!("solution not positive: min {:e}", report.min_profile)));
    }
    if report.pde_residual_starstar > residual_tol {
        return (6, Some(format!("PDE residual {:e} above {residual_tol:e}", report.pde_residual_starstar)));
    }
    (0, None)
}

fn solution_csv(gs: &GroundState, phi: &ModeExpansion) -> String {
    let phi0 = phi.coefficient(0);
    let g = gs.grid();
    let mut out = String::from("s,r,u,phi\n");
    for i in 0..g.count() {
        let p = phi0.values()[i];
        out.push_str(&format!("{:e},{:e},{:e},{:e}\n", g.nodes()[i], g.r_nodes()[i], gs.w()[i] + p, p));
    }
    out
}

fn print_report(label: &str, r: &SolveReport, code: i32) {
    println!(
        "{label} lambda={} converged={} iterations={} ‖φ‖*={:.4e} residual={:.3e} min_u={:.3e} sup_annulus={:.6e} mode1_skipped={} exit={code}",
        r.lambda, r.converged, r.iterations, r.phi_star_norm, r.pde_residual_starstar, r.min_profile, r.u_sup_on_annulus, r.mode1_skipped
    );
}

pub fn solve(ctx: &Context) -> Result<i32> {
    let cfg = &ctx.cfg;
    let v = cfg.validate_solve()?;
    let gs = ctx.ground_state(&v.exponents, &v.grid)?;
    let (code, error, report) = match run_solve(&gs, &v.source, &v.solve) {
        Ok((run, report)) => {
            let (code, error) = classify(&report, cfg.residual_tol);
            write_atomic(&ctx.path("solution.csv"), solution_csv(&gs, &run.phi).as_bytes())?;
            write_modes(ctx, "solution_phi", &run.phi)?;
            print_report("solve", &report, code);
            (code, error, Some(report))
        }
        Err(err) => (core_code(&err), Some(err.to_string()), None),
    };
    if let Some(msg) = &error {
        eprintln!("solve failed: {msg}");
    }
    let record = Record {
        timestamp: now(),
        command: "solve",
        exit_code: code,
        error,
        body: SolveBody { config: cfg, report: report.as_ref() },
    };
    write_atomic(&ctx.path("solve.jsonl"), jsonl(&[record])?.as_bytes())?;
    Ok(code)
}

#[derive(Serialize)]
struct SweepBody<'a> {
    lambda: f64,
    config: &'a RunConfig,
    report: Option<&'a SolveReport>,
}

pub fn sweep(ctx: &Context) -> Result<i32> {
    let cfg = &ctx.cfg;
    let (v, lambdas, dropped) = cfg.validate_sweep()?;
    if !dropped.is_empty() {
        eprintln!("warning: duplicate lambda values ignored: {dropped:?}");
    }
    let gs = ctx.ground_state(&v.exponents, &v.grid)?;
    let results: Vec<(f64, Result<SolveReport, supercrit::Error>)> = lambdas
        .par_iter()
        .map(|&lambda| {
            let sc = supercrit::fixedpoint::SolveConfig { lambda, ..v.solve.clone() };
            (lambda, run_solve(&gs, &v.source, &sc).map(|(_, r)| r))
        })
        .collect();
    let timestamp = now();
    let mut csv = String::from("lambda,u_sup_on_annulus,converged,iterations,phi_star_norm,pde_residual_starstar,min_profile,exit_code\n");
    let mut records = Vec::new();
    let mut first_failure = 0;
    for (lambda, res) in &results {
        let (code, error, report) = match res {
            Ok(r) => {
                let (code, error) = classify(r, cfg.residual_tol);
                print_report("sweep", r, code);
                csv.push_str(&format!(
                    "{lambda:e},{:e},{},{},{:e},{:e},{:e},{code}\n",
                    r.u_sup_on_annulus, r.converged, r.iterations, r.phi_star_norm, r.pde_residual_starstar, r.min_profile
                ));
                (code, error, Some(r))
            }
            Err(err) => {
                let code = core_code(err);
                println!("sweep lambda={lambda} error=\"{err}\" exit={code}");
                csv.push_str(&format!("{lambda:e},NaN,false,0,NaN,NaN,NaN,{code}\n"));
                (code, Some(err.to_string()), None)
            }
        };
        if first_failure == 0 {
            first_failure = code;
        }
        records.push(Record { timestamp, command: "sweep", exit_code: code, error, body: SweepBody { lambda: *lambda, config: cfg, report } });
    }
    write_atomic(&ctx.path("sweep.jsonl"), jsonl(&records)?.as_bytes())?;
    write_atomic(&ctx.path("sweep.csv"), csv.as_bytes())?;
    Ok(first_failure)
}

/// Reads `solution_phi_k{k}.csv` for every mode present in `dir`.
fn read_modes(dir: &Path, n: u32, kmax: usize, grid: &std::sync::Arc<supercrit::Grid>) -> Result<ModeExpansion> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(k) = name.strip_prefix("solution_phi_k").and_then(|s| s.strip_suffix(".csv")).and_then(|s| s.parse::<usize>().ok()) {
            found.push(k);
        }
    }
    found.sort_unstable();
    anyhow::ensure!(!found.is_empty(), "no solution_phi_k*.csv in {}", dir.display());
    let mut phi = ModeExpansion::new(n, kmax.max(*found.last().unwrap()), grid.clone());
    for k in found {
        let path = dir.join(format!("solution_phi_k{k}.csv"));
        let text = std::fs::read_to_string(&path)?;
        let profile = RadialProfile::from_csv(grid.clone(), &text).with_context(|| path.display().to_string())?;
        phi.insert(k, profile)?;
    }
    Ok(phi)
}

pub fn verify(ctx: &Context, input: &Path) -> Result<i32> {
    let cfg = &ctx.cfg;
    let v = cfg.validate_solve()?;
    let phi = read_modes(input, v.exponents.n, cfg.kmax.max(v.source.kmax()), &v.grid)?;
    let gs = ctx.ground_state(&v.exponents, &v.grid)?;
    let t = RightInverse::new(&gs, WeightedNormConfig::new(&v.exponents), phi.kmax(), cfg.symmetric)?;
    let f = rescaled_source(&v.source, &v.exponents, cfg.lambda, &v.grid)?;
    let run = SolveRun { phi, iterations: 0, increments: Vec::new(), contraction_ratios: Vec::new(), failure: None };
    let report = verify_solution(&t, &v.source, &f, &run, &v.solve)?;
    let (mut code, mut error) = classify(&report, cfg.residual_tol);
    if code == 0 && report.phi_star_norm > cfg.rho {
        (code, error) = (5, Some(format!("‖φ‖* = {:e} outside the ball of radius {}", report.phi_star_norm, cfg.rho)));
    }
    print_report("verify", &report, code);
    println!("fixed_point_residual={:.3e}", report.fixed_point_residual);
    let record = Record {
        timestamp: now(),
        command: "verify",
        exit_code: code,
        error,
        body: SolveBody { config: cfg, report: Some(&report) },
    };
    write_atomic(&ctx.path("verify.jsonl"), jsonl(&[record])?.as_bytes())?;
    Ok(code)
}
