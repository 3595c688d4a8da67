use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_supercrit");
const FINE: &str = "38401";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env_remove("SUPERCRIT_CACHE_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn records(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn exponent_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["exponents", "--n", "6", "--p", "3"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("1.7320508"));
    assert!(text.contains("mode1_ok"));

    let o = run(dir.path(), &["exponents", "--n", "11", "--p", "7"]);
    let text = stdout(&o);
    assert!(text.contains("4.333333"), "{text}");
    assert!(text.contains("above_joseph_lundgren"));

    let o = run(dir.path(), &["exponents", "--n", "6", "--p", "1.5"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("subcritical/critical regime unsupported"));
}

fn measured_l(text: &str) -> f64 {
    let field = text.split_whitespace().find_map(|w| w.strip_prefix("L_measured=")).unwrap();
    field.parse().unwrap()
}

#[test]
fn ground_state_and_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let cache_arg = cache.to_str().unwrap();
    let cold = run(dir.path(), &["ground-state", "--cache-dir", cache_arg, "--out", "a"]);
    assert_eq!(code(&cold), 0);
    assert!(stderr(&cold).contains("miss"));
    let l = measured_l(&stdout(&cold));
    assert!((l - 3f64.sqrt()).abs() <= 0.01 * 3f64.sqrt());
    assert!(stdout(&cold).contains("max_weighted_residual="));

    let warm = run(dir.path(), &["ground-state", "--cache-dir", cache_arg, "--out", "b"]);
    assert!(stderr(&warm).contains("hit"));
    let a = std::fs::read(dir.path().join("a/ground_state.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/ground_state.csv")).unwrap();
    assert_eq!(a, b);
    assert!(String::from_utf8_lossy(&a).starts_with("s,r,value,derivative\n"));

    // environment default, overridden by the flag
    let env_cache = dir.path().join("env-cache");
    let o = Command::new(BIN)
        .current_dir(dir.path())
        .env("SUPERCRIT_CACHE_DIR", &env_cache)
        .args(["ground-state", "--points", "1201"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_dir(&env_cache).unwrap().count(), 1);
    let o = Command::new(BIN)
        .current_dir(dir.path())
        .env("SUPERCRIT_CACHE_DIR", &env_cache)
        .args(["ground-state", "--points", "601", "--cache-dir", cache_arg])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_dir(&env_cache).unwrap().count(), 1);
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 2);
}

#[test]
fn ground_state_other_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["ground-state", "--n", "4", "--p", "6"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let beta: f64 = 0.4 * (2.0 - 0.4);
    let l = beta.powf(0.2);
    assert!((measured_l(&stdout(&o)) - l).abs() <= 0.01 * l);
}

#[test]
fn integration_failure_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    // the head of the grid is too far out for w to have reached its limit
    let o = run(dir.path(), &["ground-state", "--smin", "-1", "--points", "1201"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn acceptance_solve() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["solve", "--n", "6", "--p", "3", "--mu", "4", "--r1", "20", "--lambda", "0.05", "--points", FINE]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/solution.csv")).unwrap();
    assert!(csv.starts_with("s,r,u,phi\n"));
    assert_eq!(csv.lines().count(), 38402);
    let rec = &records(&dir.path().join("out/solve.jsonl"))[0];
    assert_eq!(rec["exit_code"], 0);
    assert_eq!(rec["report"]["converged"], true);
    assert!(rec["report"]["pde_residual_starstar"].as_f64().unwrap() <= 1e-6);
    assert!(rec["report"]["phi_star_norm"].as_f64().unwrap() <= 0.1);

    let v = run(dir.path(), &["verify", "--points", FINE]);
    assert_eq!(code(&v), 0, "{}", stderr(&v));
    let wrong = run(dir.path(), &["verify", "--points", FINE, "--lambda", "0.025"]);
    assert_eq!(code(&wrong), 6);
}

#[test]
fn residual_criterion_at_default_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["solve"]);
    assert_eq!(code(&o), 6);
    let rec = &records(&dir.path().join("out/solve.jsonl"))[0];
    assert!(rec["error"].as_str().unwrap().contains("PDE residual"));
    assert!(dir.path().join("out/solution.csv").exists());
}

#[test]
fn small_ball_escapes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["solve", "--rho", "1e-6"]);
    assert_eq!(code(&o), 5);
    let rec = &records(&dir.path().join("out/solve.jsonl"))[0];
    assert_eq!(rec["report"]["failure"]["kind"], "left_ball");
    assert!(dir.path().join("out/solution_phi_k0.csv").exists());
}

#[test]
fn iteration_budget_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["solve", "--max-iter", "1"]);
    assert_eq!(code(&o), 4);
    let rec = &records(&dir.path().join("out/solve.jsonl"))[0];
    assert_eq!(rec["report"]["failure"]["kind"], "max_iterations");
}

#[test]
fn symmetric_open_case() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["solve", "--p", "2.2"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("symmetric"));
    let o = run(dir.path(), &["solve", "--n", "6", "--p", "2.2", "--mu", "5", "--symmetric", "--points", FINE]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let rec = &records(&dir.path().join("out/solve.jsonl"))[0];
    assert_eq!(rec["report"]["mode1_skipped"], true);
}

fn strip_timestamp(text: &str) -> Vec<Value> {
    text.lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("timestamp").unwrap();
            v
        })
        .collect()
}

#[test]
fn identical_configs_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        assert_eq!(code(&run(dir.path(), &["solve", "--points", "1201", "--residual-tol", "1", "--out", out])), 0);
    }
    for file in ["solution.csv", "solution_phi_k0.csv"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let a = std::fs::read_to_string(dir.path().join("a/solve.jsonl")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b/solve.jsonl")).unwrap();
    assert_eq!(strip_timestamp(&a), strip_timestamp(&b));
}

#[test]
fn sweep_trend_and_dedup() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["sweep", "--lambdas", "0.1,0.05,0.025,0.1", "--residual-tol", "1e-3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("duplicate"));
    let recs = records(&dir.path().join("out/sweep.jsonl"));
    assert_eq!(recs.len(), 3);
    let sups: Vec<f64> = recs.iter().map(|r| r["report"]["u_sup_on_annulus"].as_f64().unwrap()).collect();
    assert!(sups.windows(2).all(|w| w[1] < w[0]), "{sups:?}");
    let csv = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert!(csv.starts_with("lambda,u_sup_on_annulus,"));
    assert_eq!(csv.lines().count(), 4);

    assert_eq!(code(&run(dir.path(), &["sweep"])), 2);
}

#[test]
fn sweep_continues_past_failures() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["sweep", "--lambdas", "0.05,0.025", "--rho", "0.008", "--residual-tol", "1e-3"]);
    let recs = records(&dir.path().join("out/sweep.jsonl"));
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0]["exit_code"], 0);
    assert_eq!(recs[1]["exit_code"], 5);
    assert_eq!(code(&o), 5);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "# small run\nn = 6\np = 3\npoints = 1201\nresidual_tol = 1\nlambda = 0.1\n").unwrap();
    let o = run(dir.path(), &["solve", "--config", "run.cfg", "--lambda", "0.05"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rec = &records(&dir.path().join("out/solve.jsonl"))[0];
    assert_eq!(rec["config"]["points"], 1201);
    assert_eq!(rec["report"]["lambda"], 0.05);

    std::fs::write(dir.path().join("bad.cfg"), "p = 3\nrho = 7\n").unwrap();
    let o = run(dir.path(), &["solve", "--config", "bad.cfg"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("`rho`"));

    let o = run(dir.path(), &["solve", "--mu", "2"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("`mu`"));
}

#[test]
fn linsolve_records() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["linsolve", "--source", "0:gauss,1:exp:2,3:ramp"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let recs = records(&dir.path().join("out/linsolve.jsonl"));
    assert_eq!(recs.iter().map(|r| r["k"].as_u64().unwrap()).collect::<Vec<_>>(), vec![0, 1, 3]);
    for r in &recs {
        for key in ["starstar_in", "star_out", "residual", "C_k"] {
            assert!(r[key].is_number(), "{key}");
        }
    }
    let phi = std::fs::read_to_string(dir.path().join("out/linsolve_phi_k3.csv")).unwrap();
    assert!(phi.starts_with("s,r,value,derivative\n"));

    let o = run(dir.path(), &["linsolve", "--p", "2.2", "--source", "1:gauss"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("`source`"));
}
