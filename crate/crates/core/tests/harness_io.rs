use std::fs;

use resalloc::harness::{self, ExperimentConfig};
use resalloc::netgraph::WeightedGraph;
use resalloc::oracle::optimal_value_trace;

fn desk() -> ExperimentConfig {
    let mut c = harness::resolve_config("f2_saturated_desk").unwrap();
    c.sim.horizon = 2.0;
    c
}

#[test]
fn identical_configs_write_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    harness::run(&desk(), Some(&a)).unwrap();
    harness::run(&desk(), Some(&b)).unwrap();
    for f in ["trajectory.csv", "oracle.csv", "graph0.txt", "graph3.txt"] {
        let name = format!("f2_saturated_desk.{f}");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{f}");
    }
}

#[test]
fn different_seed_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut other = desk();
    other.reseed(77);
    harness::run(&desk(), Some(&dir.path().join("a"))).unwrap();
    harness::run(&other, Some(&dir.path().join("b"))).unwrap();
    let f = "f2_saturated_desk.trajectory.csv";
    assert_ne!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
}

#[test]
fn trajectory_csv_rows_follow_the_header() {
    let config = desk();
    let exp = harness::build(&config).unwrap();
    let out = harness::execute(&exp).unwrap();
    let dir = tempfile::tempdir().unwrap();
    harness::write_artifacts(&exp, &out, dir.path()).unwrap();

    let mut reader = csv::Reader::from_path(dir.path().join("f2_saturated_desk.trajectory.csv")).unwrap();
    let header = reader.headers().unwrap().clone();
    let (n, d) = (config.problem.n, config.problem.d);
    assert_eq!(header.len(), 7 + n * d);
    assert_eq!(&header[7], "x_0_0");

    let mut times = Vec::new();
    let mut f_star = Vec::new();
    for row in reader.records() {
        let row = row.unwrap();
        assert_eq!(row.len(), header.len());
        let vals: Vec<f64> = row.iter().map(|v| v.parse().unwrap()).collect();
        assert!(vals.iter().all(|v| v.is_finite()));
        times.push(vals[0]);
        f_star.push(vals[2]);
    }
    let trace = optimal_value_trace(&exp.problem, &exp.oracle, &times);
    for (a, b) in f_star.iter().zip(&trace) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
    }

    let oracle_csv = fs::read_to_string(dir.path().join("f2_saturated_desk.oracle.csv")).unwrap();
    assert!(oracle_csv.starts_with("agent,coordinate,x_star"));
    assert_eq!(oracle_csv.lines().filter(|l| l.starts_with("phi_star")).count(), d);

    let report = fs::read_to_string(dir.path().join("f2_saturated_desk.report.txt")).unwrap();
    assert!(report.contains("steps=2000"));

    let g0 = fs::read_to_string(dir.path().join("f2_saturated_desk.graph0.txt")).unwrap();
    assert_eq!(&WeightedGraph::parse_triples(&g0).unwrap(), &exp.sim.schedule.graphs()[0]);
}

#[test]
fn passing_agc_run_exits_zero() {
    let mut c = harness::resolve_config("agc_robust").unwrap();
    c.sim.horizon = 50.0;
    let out = harness::run(&c, None).unwrap();
    assert_eq!(harness::check(&out.report), harness::EXIT_PASS, "{}", out.report.render());
    assert!(out.report.render().contains("passed=true"));
}

#[test]
fn infeasible_configs_are_config_errors() {
    let text = harness::builtin_scenario("agc_linear").unwrap().text;
    let bad = text.replace("a = 1\n", "a = 1, -1, 1, -1, 1, -1, 1, -1, 1, -1\n");
    let c = ExperimentConfig::parse(&bad).unwrap();
    let err = harness::build(&c).unwrap_err();
    assert!(matches!(err, resalloc::Error::DegenerateCoupling(_)), "{err:?}");

    let bad = text.replace("dt = 0.002", "dt = 0");
    let err = ExperimentConfig::parse(&bad).unwrap_err();
    assert_eq!(harness::exit_code_for(&err), harness::EXIT_CONFIG);
}
