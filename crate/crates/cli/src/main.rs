//! `supercrit`: batch driver for ground states, the linearized inverse and the
//! full fixed-point solve.

mod commands;
mod config;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, RunConfig};
use supercrit::fixedpoint::SolveFailure;

#[derive(Parser)]
#[command(name = "supercrit", version, about = "Positive solutions of Δu + u^p + f = 0 in the supercritical range")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the exponent table for (n, p)
    Exponents(Common),
    /// Compute the ground state and write its profile
    GroundState(Common),
    /// Apply the right inverse to a combination of reference sources
    Linsolve {
        #[command(flatten)]
        common: Common,
        /// `k:kind[:amplitude],...`, kinds as in the reference family
        #[arg(long)]
        source: Option<String>,
    },
    /// Full fixed-point solve for one λ
    Solve(Common),
    /// Independent solves over a list of λ
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated λ values
        #[arg(long)]
        lambdas: Option<String>,
    },
    /// Re-check a stored solution from its per-mode profiles
    Verify {
        #[command(flatten)]
        common: Common,
        /// Directory holding `solution_phi_k*.csv` (default: --out)
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    n: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    p: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    sigma: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    smin: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    smax: Option<String>,
    #[arg(long)]
    points: Option<String>,
    #[arg(long)]
    kmax: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    r1: Option<String>,
    /// Source amplitudes per mode, `k:a,...`
    #[arg(long)]
    modes: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    tol: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    /// Axis-symmetric run: the mode-1 solver is disabled
    #[arg(long)]
    symmetric: bool,
    /// PDE residual threshold in the ** norm
    #[arg(long, allow_hyphen_values = true)]
    residual_tol: Option<String>,
    /// `key = value` file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Ground-state cache (default: $SUPERCRIT_CACHE_DIR)
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

impl Common {
    fn run_config(&self, extra: &[(&str, &Option<String>)]) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags = [
            ("n", &self.n),
            ("p", &self.p),
            ("sigma", &self.sigma),
            ("smin", &self.smin),
            ("smax", &self.smax),
            ("points", &self.points),
            ("kmax", &self.kmax),
            ("mu", &self.mu),
            ("r1", &self.r1),
            ("modes", &self.modes),
            ("lambda", &self.lambda),
            ("rho", &self.rho),
            ("tol", &self.tol),
            ("max_iter", &self.max_iter),
            ("residual_tol", &self.residual_tol),
        ];
        for (key, value) in flags.iter().chain(extra) {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.symmetric {
            cfg.symmetric = true;
        }
        Ok(cfg)
    }

    fn context(&self, extra: &[(&str, &Option<String>)]) -> Result<commands::Context, ConfigError> {
        Ok(commands::Context {
            cfg: self.run_config(extra)?,
            out: self.out.clone(),
            cache: store::cache_dir(self.cache_dir.clone()),
        })
    }
}

pub fn failure_code(f: &SolveFailure) -> i32 {
    match f {
        SolveFailure::LeftBall { .. } => 5,
        SolveFailure::NonContraction { .. } | SolveFailure::MaxIterations { .. } => 4,
    }
}

pub fn core_code(e: &supercrit::Error) -> i32 {
    use supercrit::Error::*;
    match e {
        Dimension(_) | Subcritical { .. } | InvalidParameter { .. } | InvalidGrid(_) | ModeNotAdmissible { .. } => 2,
        Solve(f) => failure_code(f),
        InvalidProfile(_) | NonIntegrable { .. } | Integration(_) | WronskianDrift { .. } | WronskianDegenerate(_) => 3,
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    err.downcast_ref::<supercrit::Error>().map_or(1, core_code)
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Exponents(c) => commands::exponents(&c.context(&[])?),
        Command::GroundState(c) => commands::ground_state(&c.context(&[])?),
        Command::Linsolve { common, source } => commands::linsolve(&common.context(&[("source", &source)])?),
        Command::Solve(c) => commands::solve(&c.context(&[])?),
        Command::Sweep { common, lambdas } => commands::sweep(&common.context(&[("lambdas", &lambdas)])?),
        Command::Verify { common, input } => {
            let ctx = common.context(&[])?;
            let input = input.unwrap_or_else(|| ctx.out.clone());
            commands::verify(&ctx, &input)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code(&err)
        }
    };
    ExitCode::from(code as u8)
}
