use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use resalloc::harness::{self, ExperimentConfig, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_PASS, EXIT_RUNTIME};
use resalloc::netgraph::union_graph;
use resalloc::{oracle, Error};

#[derive(Parser)]
#[command(name = "resalloc", version, about = "Distributed resource allocation experiments")]
struct Cli {
    /// Output directory for CSV artifacts and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override seeds: problem N, schedule N + 1.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only print failures.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one or more configs and evaluate their checks.
    Run {
        /// Config files or built-in scenario names.
        #[arg(required = true)]
        configs: Vec<String>,
        /// Number of configs to run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Solve for the optimal allocation of a config's problem.
    Oracle { config: String },
    /// Check that the config's graph schedule is uniformly connected.
    CheckConnectivity { config: String },
    /// Print the built-in scenarios.
    ListScenarios,
}

fn load(cli: &Cli, spec: &str) -> Result<ExperimentConfig, Error> {
    let mut config = harness::resolve_config(spec)?;
    if let Some(seed) = cli.seed {
        config.reseed(seed);
    }
    Ok(config)
}

fn report_error(spec: &str, err: &Error) -> i32 {
    eprintln!("{spec}: {err}");
    harness::exit_code_for(err)
}

fn run_one(cli: &Cli, spec: &str) -> (i32, String) {
    let config = match load(cli, spec) {
        Ok(c) => c,
        Err(e) => return (report_error(spec, &e), String::new()),
    };
    let exp = match harness::build(&config) {
        Ok(e) => e,
        Err(e) => return (report_error(spec, &e), String::new()),
    };
    let output = match harness::execute(&exp) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{spec}: {e}");
            return (EXIT_RUNTIME, String::new());
        }
    };
    if let Some(dir) = cli.out.as_deref().or(config.output.as_deref()) {
        if let Err(e) = harness::write_artifacts(&exp, &output, dir) {
            eprintln!("{spec}: {e}");
            return (EXIT_RUNTIME, String::new());
        }
    }
    let code = harness::check(&output.report);
    let mut text = String::new();
    if !cli.quiet {
        text = output.report.render();
    } else if code != EXIT_PASS {
        for c in output.report.failing() {
            text.push_str(&format!("{}: FAIL {} value {:e} limit {:e}\n", config.name, c.name, c.value, c.limit));
        }
    }
    (code, text)
}

fn cmd_run(cli: &Cli, configs: &[String], jobs: usize) -> i32 {
    let results: Vec<(i32, String)> = if jobs > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => pool.install(|| configs.par_iter().map(|c| run_one(cli, c)).collect()),
            Err(e) => {
                eprintln!("cannot start worker pool: {e}");
                return EXIT_RUNTIME;
            }
        }
    } else {
        configs.iter().map(|c| run_one(cli, c)).collect()
    };
    let mut stdout = io::stdout().lock();
    for (_, text) in &results {
        let _ = stdout.write_all(text.as_bytes());
    }
    // Worst outcome wins: runtime > config > check failure > pass.
    let rank = |c: i32| match c {
        EXIT_RUNTIME => 3,
        EXIT_CONFIG => 2,
        EXIT_CHECK_FAILED => 1,
        _ => 0,
    };
    results.iter().map(|r| r.0).max_by_key(|&c| rank(c)).unwrap_or(EXIT_PASS)
}

fn cmd_oracle(cli: &Cli, spec: &str) -> i32 {
    let result = load(cli, spec).and_then(|c| {
        let problem = harness::build_problem(&c.problem)?;
        let sol = oracle::solve_kkt(&problem, oracle::DEFAULT_TOL)?;
        Ok((c, problem, sol))
    });
    let (config, problem, sol) = match result {
        Ok(v) => v,
        Err(e) => return report_error(spec, &e),
    };
    if !cli.quiet {
        println!("phi_star = {:?}", sol.phi_star);
        println!("F_star = {}", sol.static_value(&problem));
        println!("constraint residual = {:e}", sol.residual);
        println!("stationarity error = {:e}", sol.stationarity_error(&problem));
    }
    let written = match &cli.out {
        Some(dir) => std::fs::create_dir_all(dir)
            .map_err(Error::from)
            .and_then(|_| std::fs::File::create(dir.join(format!("{}.oracle.csv", config.name))).map_err(Error::from))
            .and_then(|f| sol.write_csv(f)),
        None if cli.quiet => Ok(()),
        None => sol.write_csv(io::stdout().lock()),
    };
    match written {
        Ok(()) => EXIT_PASS,
        Err(e) => {
            eprintln!("{spec}: {e}");
            EXIT_RUNTIME
        }
    }
}

fn cmd_connectivity(cli: &Cli, spec: &str) -> i32 {
    let result = load(cli, spec).and_then(|c| {
        let schedule = harness::build_schedule(&c.schedule, c.problem.n)?;
        Ok((c, schedule))
    });
    let (config, schedule) = match result {
        Ok(v) => v,
        Err(e) => return report_error(spec, &e),
    };
    let window = harness::connectivity_window(&config, &schedule);
    let connected = if window.is_finite() {
        match schedule.check_uniform_connectivity(window) {
            Ok(ok) => ok,
            Err(e) => return report_error(spec, &e),
        }
    } else {
        schedule.graphs()[0].is_connected()
    };
    if !cli.quiet {
        for (k, g) in schedule.graphs().iter().enumerate() {
            println!("graph {k}: {} edges, connected = {}", g.edge_count(), g.is_connected());
        }
        if let Ok(union) = union_graph(schedule.graphs()) {
            println!("union: {} edges, connected = {}", union.edge_count(), union.is_connected());
        }
        println!("uniformly connected over window {window}: {connected}");
    }
    if connected {
        EXIT_PASS
    } else {
        EXIT_CHECK_FAILED
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run { configs, jobs } => cmd_run(&cli, configs, *jobs),
        Command::Oracle { config } => cmd_oracle(&cli, config),
        Command::CheckConnectivity { config } => cmd_connectivity(&cli, config),
        Command::ListScenarios => {
            for s in harness::BUILTIN_SCENARIOS {
                println!("{:<20} {}", s.name, s.description);
            }
            EXIT_PASS
        }
    };
    ExitCode::from(code as u8)
}
