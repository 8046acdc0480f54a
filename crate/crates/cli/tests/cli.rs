use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn resalloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resalloc"))
        .args(args)
        .output()
        .expect("binary runs")
}

const SMALL: &str = "\
[problem]
name = ring
n = 6
a = 1
b = 6
cost = quadratic
gamma = 0.5
init = random_feasible

[actuation]
kind = saturation
kappa = 1.0

[schedule]
kind = cycle
weights = 1, 1

[sim]
dt = 0.01
horizon = 30
record_every = 10

[checks]
feasibility = 1e-9
grad_consensus = 1e-5
";

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn list_scenarios_names_builtins() {
    let out = resalloc(&["list-scenarios"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["f2_quantized", "f2_saturated", "agc_fixed_time", "agc_robust", "agc_linear"] {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }
}

#[test]
fn run_writes_artifacts_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ring.cfg", SMALL);
    let out_dir = dir.path().join("out");
    let out = resalloc(&["run", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("passed=true"));
    for f in ["ring.trajectory.csv", "ring.oracle.csv", "ring.report.txt", "ring.graph0.txt"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(out_dir.join("ring.trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,F,F_star,lyapunov,feas_residual,grad_consensus,max_rate"));
}

#[test]
fn identical_runs_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ring.cfg", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = resalloc(&["run", &cfg, "--quiet", "--seed", "9", "--out", d.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
    }
    for f in ["ring.trajectory.csv", "ring.oracle.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn short_horizon_fails_with_named_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "short.cfg", &SMALL.replace("horizon = 30", "horizon = 0.05"));
    let out = resalloc(&["run", &cfg, "--quiet"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("FAIL grad_consensus"), "{text}");
}

#[test]
fn bad_config_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", &SMALL.replace("kappa = 1.0", "kappa = soft"));
    let out = resalloc(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 12") && err.contains("actuation.kappa"), "{err}");

    let out = resalloc(&["run", "/nonexistent/and/not/a/scenario"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn jobs_run_several_configs() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "ring.cfg", SMALL);
    let short = write(dir.path(), "short.cfg", &SMALL.replace("horizon = 30", "horizon = 0.05"));
    let out = resalloc(&["run", &good, &good, "--jobs", "2", "--quiet"]);
    assert_eq!(out.status.code(), Some(0));
    let out = resalloc(&["run", &good, &short, "--jobs", "2", "--quiet"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn oracle_prints_solution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ring.cfg", &SMALL.replace("b = 6", "b = 12"));
    let out = resalloc(&["oracle", &cfg]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    // x^2/2 on six agents sharing 12: every x_i = 2 and phi = 2.
    assert!(text.contains("agent,coordinate,x_star"), "{text}");
    let values: Vec<f64> = text
        .lines()
        .filter(|l| l.starts_with(|c: char| c.is_ascii_digit()) || l.starts_with("phi_star,"))
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 7);
    assert!(values.iter().all(|v| (v - 2.0).abs() < 1e-9), "{values:?}");
}

#[test]
fn oracle_on_builtin_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = resalloc(&["oracle", "agc_fixed_time", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    assert!(dir.path().join("agc_fixed_time.oracle.csv").exists());
}

#[test]
fn connectivity_check() {
    let out = resalloc(&["check-connectivity", "f2_saturated"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("uniformly connected over window"));

    let dir = tempfile::tempdir().unwrap();
    let sparse = SMALL.replace("kind = cycle", "kind = erdos_renyi\np = 0.0");
    let cfg = write(dir.path(), "sparse.cfg", &sparse);
    let out = resalloc(&["check-connectivity", &cfg]);
    assert_eq!(out.status.code(), Some(1));
}
