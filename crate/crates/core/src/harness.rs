//! Experiment runner: config grammar, scenario construction, artifact
//! emission and pass/fail checks.
//!
//! Configs are flat sectioned `key = value` text:
//!
//! ```text
//! [problem]
//! scenario = f2_saturated
//! n = 20
//! d = 4
//! a = range 0.1, 1.0
//! b = 10
//! cost = f2
//! seed = 1
//!
//! [actuation]
//! kind = saturation
//! kappa = 1.0
//!
//! [schedule]
//! kind = erdos_renyi
//! graphs = 4
//! p = 0.1
//! dwell = 0.1
//!
//! [sim]
//! dt = 0.001
//! horizon = 50
//!
//! [checks]
//! feasibility = 1e-9
//! ```
//!
//! Lines starting with `#` are comments. Lists are comma separated; a
//! single value for `b` is broadcast to every coordinate.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actuation::Actuation;
use crate::costs::{self, F2Ranges, GeneratorRanges, LocalCost};
use crate::dynamics::{self, AllocationProblem, Integrator, SimConfig, StateMatrix, Termination, Trajectory};
use crate::error::{Error, Result};
use crate::netgraph::{self, GraphSchedule, WeightRange, WeightedGraph};
use crate::oracle::{self, KktSolution};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    F2Quantized,
    F2Saturated,
    Agc,
    Custom,
}

impl Scenario {
    fn as_str(&self) -> &'static str {
        match self {
            Scenario::F2Quantized => "f2_quantized",
            Scenario::F2Saturated => "f2_saturated",
            Scenario::Agc => "agc",
            Scenario::Custom => "custom",
        }
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f2_quantized" => Ok(Scenario::F2Quantized),
            "f2_saturated" => Ok(Scenario::F2Saturated),
            "agc" => Ok(Scenario::Agc),
            "custom" => Ok(Scenario::Custom),
            _ => Err(format!("unknown scenario `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CouplingSpec {
    /// Same weight for every agent.
    Uniform(f64),
    /// Seeded uniform draws from `[lo, hi]`.
    Range(f64, f64),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostSpec {
    /// Random log-sum-exp-plus-quadratic costs with sinusoidal time parts.
    F2(F2Ranges),
    /// Random generator curves `γ x² + β x + α`, `d = 1`.
    Generator(GeneratorRanges),
    /// Identical `γ x² + β x + α` on every agent, `d = 1`.
    Quadratic { gamma: f64, beta: f64, alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    pub lower: f64,
    pub upper: f64,
    pub eps: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    EqualShare,
    RandomFeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub n: usize,
    pub d: usize,
    pub a: CouplingSpec,
    pub b: Vec<f64>,
    pub cost: CostSpec,
    pub penalty: Option<PenaltySpec>,
    pub seed: u64,
    pub init: InitMode,
    /// Half-width of the uniform perturbation used by `random_feasible`.
    pub init_spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphKind {
    ErdosRenyi { p: f64 },
    Cycle,
    Complete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec {
    pub kind: GraphKind,
    pub count: usize,
    pub weights: WeightRange,
    /// `None` keeps a single graph active for the whole run.
    pub dwell: Option<f64>,
    /// Window for the uniform-connectivity check; defaults to one period.
    pub window: Option<f64>,
    pub seed: u64,
    pub max_attempts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub dt: f64,
    pub horizon: f64,
    pub integrator: Integrator,
    pub record_every: usize,
    pub tolerance: f64,
    pub plateau_steps: Option<usize>,
    pub rate_clamp: Option<f64>,
    pub rate_limit: Option<f64>,
    pub feasibility_correction: bool,
    pub record_states: bool,
}

/// Declared pass/fail checks; every field that is set becomes one check.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckSpec {
    /// `max ‖X a - b‖ <= v (1 + ‖b‖)` over the run.
    pub feasibility: Option<f64>,
    /// `max ‖X a - b‖ <= v` over the run, absolute.
    pub sum_tolerance: Option<f64>,
    /// Sampled Lyapunov residual never rises by more than `v F̄(0)`.
    pub lyapunov_monotone: Option<f64>,
    /// Final `F̄ <= v F̄(0)`.
    pub final_lyapunov: Option<f64>,
    /// Final `max |X - X*| <= v`.
    pub final_state: Option<f64>,
    pub grad_consensus: Option<f64>,
    pub max_rate: Option<f64>,
    /// Final state within the penalty box widened by `v`.
    pub box_slack: Option<f64>,
    /// Applied rates never exceed the bound implied by a bounded actuation.
    pub robust_rate_bound: bool,
    pub connectivity: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub scenario: Scenario,
    pub problem: ProblemSpec,
    pub actuation: Actuation,
    pub schedule: ScheduleSpec,
    pub sim: SimSpec,
    pub checks: CheckSpec,
    pub output: Option<PathBuf>,
}

// ---------------------------------------------------------------- parsing

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Sections {
    map: BTreeMap<String, BTreeMap<String, Entry>>,
}

fn cfg_err(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

const SECTIONS: [&str; 6] = ["problem", "actuation", "schedule", "sim", "checks", "output"];

impl Sections {
    fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split_once(" #").map_or(raw, |(b, _)| b).trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            if let Some(name) = body.strip_prefix('[').and_then(|b| b.strip_suffix(']')) {
                let name = name.trim().to_string();
                if !SECTIONS.contains(&name.as_str()) {
                    return Err(cfg_err(line, &name, "unknown section"));
                }
                map.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(cfg_err(line, body, "expected `key = value`"));
            };
            let Some(section) = &current else {
                return Err(cfg_err(line, key.trim(), "key outside of any section"));
            };
            let key = key.trim().to_string();
            let slot = map.get_mut(section).expect("section registered");
            if slot.contains_key(&key) {
                return Err(cfg_err(line, &format!("{section}.{key}"), "duplicate key"));
            }
            slot.insert(
                key,
                Entry {
                    value: value.trim().to_string(),
                    line,
                    used: false,
                },
            );
        }
        Ok(Self { map })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let e = self.map.get_mut(section)?.get_mut(key)?;
        e.used = true;
        Some((e.value.clone(), e.line))
    }

    fn get<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>> {
        match self.take(section, key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| cfg_err(line, &format!("{section}.{key}"), format!("cannot parse `{v}`"))),
        }
    }

    fn require<T: FromStr>(&mut self, section: &str, key: &str) -> Result<T> {
        self.get(section, key)?
            .ok_or_else(|| cfg_err(0, &format!("{section}.{key}"), "missing required field"))
    }

    fn list(&mut self, section: &str, key: &str) -> Result<Option<(Vec<f64>, usize)>> {
        match self.take(section, key) {
            None => Ok(None),
            Some((v, line)) => parse_list(&v)
                .map(|l| Some((l, line)))
                .map_err(|m| cfg_err(line, &format!("{section}.{key}"), m)),
        }
    }

    fn pair(&mut self, section: &str, key: &str) -> Result<Option<(f64, f64)>> {
        match self.list(section, key)? {
            None => Ok(None),
            Some((l, _)) if l.len() == 2 => Ok(Some((l[0], l[1]))),
            Some((_, line)) => Err(cfg_err(line, &format!("{section}.{key}"), "expected two values `lo, hi`")),
        }
    }

    fn line_of(&self, section: &str, key: &str) -> usize {
        self.map.get(section).and_then(|s| s.get(key)).map_or(0, |e| e.line)
    }

    fn section_keys(&self, section: &str) -> Vec<String> {
        self.map.get(section).map_or_else(Vec::new, |s| s.keys().cloned().collect())
    }

    fn ensure_all_used(&self) -> Result<()> {
        for (section, entries) in &self.map {
            for (key, e) in entries {
                if !e.used {
                    return Err(cfg_err(e.line, &format!("{section}.{key}"), "unknown field"));
                }
            }
        }
        Ok(())
    }
}

fn parse_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| format!("cannot parse number `{}`", s.trim())))
        .collect()
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "on" | "yes" => Some(true),
        "false" | "off" | "no" => Some(false),
        _ => None,
    }
}

/// Builds an [`Actuation`] from `kind` and its named parameters.
pub fn actuation_from_parts(kind: &str, params: &BTreeMap<String, f64>) -> Result<Actuation> {
    let get = |k: &str| {
        params
            .get(k)
            .copied()
            .ok_or_else(|| Error::param(format!("actuation `{kind}` needs parameter `{k}`")))
    };
    let allowed: &[&str] = match kind {
        "identity" | "linear" => &[],
        "power_sign" => &["mu"],
        "fixed_time" => &["mu1", "mu2"],
        "uniform_quantizer" | "log_quantizer" => &["delta"],
        "robust_uniform" => &["eps", "threshold"],
        "robust_laplace" => &["eps"],
        "saturation" => &["kappa"],
        other => return Err(Error::param(format!("unknown actuation kind `{other}`"))),
    };
    if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::param(format!("actuation `{kind}` has no parameter `{k}`")));
    }
    match kind {
        "identity" | "linear" => Ok(Actuation::Identity),
        "power_sign" => Actuation::power_sign(get("mu")?),
        "fixed_time" => Actuation::fixed_time(get("mu1")?, get("mu2")?),
        "uniform_quantizer" => Actuation::uniform_quantizer(get("delta")?),
        "log_quantizer" => Actuation::log_quantizer(get("delta")?),
        "robust_uniform" => Actuation::robust_uniform(get("eps")?, get("threshold")?),
        "robust_laplace" => Actuation::robust_laplace(get("eps")?),
        "saturation" => Actuation::saturation(get("kappa")?),
        _ => unreachable!(),
    }
}

/// Parses one stage such as `saturation kappa=1.0`.
pub fn parse_actuation_stage(text: &str) -> Result<Actuation> {
    let mut parts = text.split_whitespace();
    let kind = parts.next().ok_or_else(|| Error::param("empty actuation stage"))?;
    let mut params = BTreeMap::new();
    for p in parts {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| Error::param(format!("expected `name=value`, got `{p}`")))?;
        let v: f64 = v.parse().map_err(|_| Error::param(format!("cannot parse `{v}`")))?;
        params.insert(k.to_string(), v);
    }
    actuation_from_parts(kind, &params)
}

/// Inverse of [`parse_actuation_stage`]; compositions are written as
/// stages separated by `|`, outermost first.
pub fn actuation_to_text(g: &Actuation) -> String {
    match g {
        Actuation::Identity => "identity".into(),
        Actuation::PowerSign { mu } => format!("power_sign mu={mu}"),
        Actuation::FixedTime { mu1, mu2 } => format!("fixed_time mu1={mu1} mu2={mu2}"),
        Actuation::UniformQuantizer { delta } => format!("uniform_quantizer delta={delta}"),
        Actuation::LogQuantizer { delta } => format!("log_quantizer delta={delta}"),
        Actuation::RobustUniform { eps, threshold } => format!("robust_uniform eps={eps} threshold={threshold}"),
        Actuation::RobustLaplace { eps } => format!("robust_laplace eps={eps}"),
        Actuation::Saturation { kappa } => format!("saturation kappa={kappa}"),
        Actuation::Compose { outer, inner } => format!("{} | {}", actuation_to_text(outer), actuation_to_text(inner)),
    }
}

fn parse_actuation_chain(text: &str) -> Result<Actuation> {
    let stages = text
        .split('|')
        .map(|s| parse_actuation_stage(s.trim()))
        .collect::<Result<Vec<_>>>()?;
    let mut iter = stages.into_iter().rev();
    let mut g = iter.next().ok_or_else(|| Error::param("empty composition"))?;
    for outer in iter {
        g = Actuation::compose(outer, g);
    }
    Ok(g)
}

fn with_line(e: Error, line: usize, field: &str) -> Error {
    match e {
        Error::Config { .. } => e,
        other => cfg_err(line, field, other.to_string()),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Sections::parse(text)?;

        let name = s.get::<String>("problem", "name")?.unwrap_or_else(|| "experiment".into());
        let scenario = match s.take("problem", "scenario") {
            None => Scenario::Custom,
            Some((v, line)) => v.parse().map_err(|m: String| cfg_err(line, "problem.scenario", m))?,
        };

        // problem
        let n: usize = s.require("problem", "n")?;
        let d: usize = s.get("problem", "d")?.unwrap_or(1);
        if n < 2 || d < 1 {
            return Err(cfg_err(s.line_of("problem", "n"), "problem.n", "need n >= 2 and d >= 1"));
        }
        let a = match s.take("problem", "a") {
            None => CouplingSpec::Uniform(1.0),
            Some((v, line)) => {
                let field = "problem.a";
                if let Some(rest) = v.strip_prefix("range") {
                    let l = parse_list(rest).map_err(|m| cfg_err(line, field, m))?;
                    if l.len() != 2 || !(l[0] <= l[1]) {
                        return Err(cfg_err(line, field, "expected `range lo, hi` with lo <= hi"));
                    }
                    CouplingSpec::Range(l[0], l[1])
                } else {
                    let l = parse_list(&v).map_err(|m| cfg_err(line, field, m))?;
                    match l.len() {
                        1 => CouplingSpec::Uniform(l[0]),
                        k if k == n => CouplingSpec::Explicit(l),
                        k => return Err(cfg_err(line, field, format!("{k} coupling weights for n = {n}"))),
                    }
                }
            }
        };
        let b = match s.list("problem", "b")? {
            None => return Err(cfg_err(0, "problem.b", "missing required field")),
            Some((l, _)) if l.len() == 1 => vec![l[0]; d],
            Some((l, _)) if l.len() == d => l,
            Some((l, line)) => return Err(cfg_err(line, "problem.b", format!("{} entries for d = {d}", l.len()))),
        };
        let cost_line = s.line_of("problem", "cost");
        let cost_kind: String = s.require("problem", "cost")?;
        let cost = match cost_kind.as_str() {
            "f2" => {
                let mut r = F2Ranges::default();
                for (key, slot) in [
                    ("f2_a", &mut r.a),
                    ("f2_b", &mut r.b),
                    ("f2_c", &mut r.c),
                    ("f2_d", &mut r.d),
                    ("f2_amplitude", &mut r.amplitude),
                    ("f2_frequency", &mut r.frequency),
                    ("f2_phase", &mut r.phase),
                ] {
                    if let Some(v) = s.pair("problem", key)? {
                        *slot = v;
                    }
                }
                CostSpec::F2(r)
            }
            "generator" => {
                if d != 1 {
                    return Err(cfg_err(cost_line, "problem.cost", "generator costs are scalar (d = 1)"));
                }
                let mut r = GeneratorRanges::default();
                for (key, slot) in [("gamma", &mut r.gamma), ("beta", &mut r.beta), ("alpha", &mut r.alpha)] {
                    if let Some(v) = s.pair("problem", key)? {
                        *slot = v;
                    }
                }
                CostSpec::Generator(r)
            }
            "quadratic" => {
                if d != 1 {
                    return Err(cfg_err(cost_line, "problem.cost", "quadratic costs are scalar (d = 1)"));
                }
                CostSpec::Quadratic {
                    gamma: s.require("problem", "gamma")?,
                    beta: s.get("problem", "beta")?.unwrap_or(0.0),
                    alpha: s.get("problem", "alpha")?.unwrap_or(0.0),
                }
            }
            other => return Err(cfg_err(cost_line, "problem.cost", format!("unknown cost `{other}`"))),
        };
        let penalty = match s.pair("problem", "box")? {
            None => None,
            Some((lower, upper)) => Some(PenaltySpec {
                lower,
                upper,
                eps: s.get("problem", "penalty_eps")?.unwrap_or(10.0),
                mu: s.get("problem", "penalty_mu")?.unwrap_or(20.0),
            }),
        };
        let seed: u64 = s.get("problem", "seed")?.unwrap_or(0);
        let init = match s.take("problem", "init") {
            None => InitMode::EqualShare,
            Some((v, line)) => match v.as_str() {
                "equal_share" => InitMode::EqualShare,
                "random_feasible" => InitMode::RandomFeasible,
                other => return Err(cfg_err(line, "problem.init", format!("unknown init mode `{other}`"))),
            },
        };
        let init_spread = s.get("problem", "init_spread")?.unwrap_or(1.0);

        // actuation
        let act_line = s.line_of("actuation", "kind");
        let kind: String = s.get("actuation", "kind")?.unwrap_or_else(|| "identity".into());
        let actuation = if kind == "compose" {
            let (stages, line) = s
                .take("actuation", "stages")
                .ok_or_else(|| cfg_err(act_line, "actuation.stages", "composition needs `stages`"))?;
            parse_actuation_chain(&stages).map_err(|e| with_line(e, line, "actuation.stages"))?
        } else {
            let mut params = BTreeMap::new();
            for key in s.section_keys("actuation") {
                if key == "kind" {
                    continue;
                }
                let v: f64 = s.require("actuation", &key)?;
                params.insert(key, v);
            }
            actuation_from_parts(&kind, &params).map_err(|e| with_line(e, act_line, "actuation.kind"))?
        };

        // schedule
        let sched_line = s.line_of("schedule", "kind");
        let graph_kind: String = s.get("schedule", "kind")?.unwrap_or_else(|| "cycle".into());
        let kind = match graph_kind.as_str() {
            "erdos_renyi" => GraphKind::ErdosRenyi {
                p: s.require("schedule", "p")?,
            },
            "cycle" => GraphKind::Cycle,
            "complete" => GraphKind::Complete,
            other => return Err(cfg_err(sched_line, "schedule.kind", format!("unknown graph kind `{other}`"))),
        };
        let (lo, hi) = s.pair("schedule", "weights")?.unwrap_or((0.5, 1.0));
        let weights =
            WeightRange::new(lo, hi).map_err(|e| with_line(e, s.line_of("schedule", "weights"), "schedule.weights"))?;
        let schedule = ScheduleSpec {
            kind,
            count: s.get("schedule", "graphs")?.unwrap_or(1),
            weights,
            dwell: s.get("schedule", "dwell")?,
            window: s.get("schedule", "window")?,
            seed: s.get("schedule", "seed")?.unwrap_or(seed.wrapping_add(1)),
            max_attempts: s.get("schedule", "max_attempts")?.unwrap_or(100),
        };
        if schedule.count == 0 {
            return Err(cfg_err(s.line_of("schedule", "graphs"), "schedule.graphs", "need at least one graph"));
        }
        if schedule.count > 1 && schedule.dwell.is_none() {
            return Err(cfg_err(sched_line, "schedule.dwell", "switching schedules need a dwell time"));
        }

        // sim
        let integrator = match s.take("sim", "integrator") {
            None => Integrator::Euler,
            Some((v, line)) => v.parse().map_err(|e| with_line(e, line, "sim.integrator"))?,
        };
        let bool_field = |s: &mut Sections, key: &str, default: bool| -> Result<bool> {
            match s.take("sim", key) {
                None => Ok(default),
                Some((v, line)) => parse_bool(&v).ok_or_else(|| cfg_err(line, &format!("sim.{key}"), "expected true/false")),
            }
        };
        let plateau_default = actuation.is_discontinuous().then_some(1000);
        let sim = SimSpec {
            dt: s.require("sim", "dt")?,
            horizon: s.require("sim", "horizon")?,
            integrator,
            record_every: s.get("sim", "record_every")?.unwrap_or(1),
            tolerance: s.get("sim", "tolerance")?.unwrap_or(1e-6),
            plateau_steps: match s.take("sim", "plateau_steps") {
                None => plateau_default,
                Some((v, _)) if v == "off" => None,
                Some((v, line)) => Some(v.parse().map_err(|_| cfg_err(line, "sim.plateau_steps", "expected a count or `off`"))?),
            },
            rate_clamp: match s.take("sim", "rate_clamp") {
                None => Some(10.0),
                Some((v, _)) if v == "off" => None,
                Some((v, line)) => Some(v.parse().map_err(|_| cfg_err(line, "sim.rate_clamp", "expected a factor or `off`"))?),
            },
            rate_limit: s.get("sim", "rate_limit")?,
            feasibility_correction: bool_field(&mut s, "feasibility_correction", false)?,
            record_states: bool_field(&mut s, "record_states", false)?,
        };
        if !(sim.dt > 0.0) {
            return Err(cfg_err(s.line_of("sim", "dt"), "sim.dt", "time step must be positive"));
        }
        if !(sim.horizon >= 0.0) {
            return Err(cfg_err(s.line_of("sim", "horizon"), "sim.horizon", "horizon must be nonnegative"));
        }
        if sim.record_every == 0 {
            return Err(cfg_err(s.line_of("sim", "record_every"), "sim.record_every", "must be at least 1"));
        }
        if let Some(dwell) = schedule.dwell {
            if sim.dt > dwell * (1.0 + 1e-12) {
                return Err(cfg_err(s.line_of("sim", "dt"), "sim.dt", "time step exceeds the dwell time"));
            }
        }

        // checks
        let checks = CheckSpec {
            feasibility: s.get("checks", "feasibility")?,
            sum_tolerance: s.get("checks", "sum_tolerance")?,
            lyapunov_monotone: s.get("checks", "lyapunov_monotone")?,
            final_lyapunov: s.get("checks", "final_lyapunov")?,
            final_state: s.get("checks", "final_state")?,
            grad_consensus: s.get("checks", "grad_consensus")?,
            max_rate: s.get("checks", "max_rate")?,
            box_slack: s.get("checks", "box_slack")?,
            robust_rate_bound: match s.take("checks", "robust_rate_bound") {
                None => false,
                Some((v, line)) => parse_bool(&v).ok_or_else(|| cfg_err(line, "checks.robust_rate_bound", "expected true/false"))?,
            },
            connectivity: match s.take("checks", "connectivity") {
                None => false,
                Some((v, line)) => parse_bool(&v).ok_or_else(|| cfg_err(line, "checks.connectivity", "expected true/false"))?,
            },
        };
        if checks.box_slack.is_some() && penalty.is_none() {
            return Err(cfg_err(s.line_of("checks", "box_slack"), "checks.box_slack", "box check without a `problem.box`"));
        }

        let output = s.get::<String>("output", "dir")?.map(PathBuf::from);
        s.ensure_all_used()?;

        Ok(Self {
            name,
            scenario,
            problem: ProblemSpec {
                n,
                d,
                a,
                b,
                cost,
                penalty,
                seed,
                init,
                init_spread,
            },
            actuation,
            schedule,
            sim,
            checks,
            output,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Overrides every seed: problem `N`, schedule `N + 1`.
    pub fn reseed(&mut self, seed: u64) {
        self.problem.seed = seed;
        self.schedule.seed = seed.wrapping_add(1);
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = &self.problem;
        writeln!(f, "[problem]")?;
        writeln!(f, "name = {}", self.name)?;
        writeln!(f, "scenario = {}", self.scenario.as_str())?;
        writeln!(f, "n = {}", p.n)?;
        writeln!(f, "d = {}", p.d)?;
        match &p.a {
            CouplingSpec::Uniform(v) => writeln!(f, "a = {v}")?,
            CouplingSpec::Range(lo, hi) => writeln!(f, "a = range {lo}, {hi}")?,
            CouplingSpec::Explicit(v) => writeln!(f, "a = {}", join(v))?,
        }
        writeln!(f, "b = {}", join(&p.b))?;
        match &p.cost {
            CostSpec::F2(r) => {
                writeln!(f, "cost = f2")?;
                for (k, v) in [
                    ("f2_a", r.a),
                    ("f2_b", r.b),
                    ("f2_c", r.c),
                    ("f2_d", r.d),
                    ("f2_amplitude", r.amplitude),
                    ("f2_frequency", r.frequency),
                    ("f2_phase", r.phase),
                ] {
                    writeln!(f, "{k} = {}, {}", v.0, v.1)?;
                }
            }
            CostSpec::Generator(r) => {
                writeln!(f, "cost = generator")?;
                writeln!(f, "gamma = {}, {}", r.gamma.0, r.gamma.1)?;
                writeln!(f, "beta = {}, {}", r.beta.0, r.beta.1)?;
                writeln!(f, "alpha = {}, {}", r.alpha.0, r.alpha.1)?;
            }
            CostSpec::Quadratic { gamma, beta, alpha } => {
                writeln!(f, "cost = quadratic")?;
                writeln!(f, "gamma = {gamma}")?;
                writeln!(f, "beta = {beta}")?;
                writeln!(f, "alpha = {alpha}")?;
            }
        }
        if let Some(pen) = &p.penalty {
            writeln!(f, "box = {}, {}", pen.lower, pen.upper)?;
            writeln!(f, "penalty_eps = {}", pen.eps)?;
            writeln!(f, "penalty_mu = {}", pen.mu)?;
        }
        writeln!(f, "seed = {}", p.seed)?;
        let init = match p.init {
            InitMode::EqualShare => "equal_share",
            InitMode::RandomFeasible => "random_feasible",
        };
        writeln!(f, "init = {init}")?;
        writeln!(f, "init_spread = {}", p.init_spread)?;

        writeln!(f, "\n[actuation]")?;
        if let Actuation::Compose { .. } = self.actuation {
            writeln!(f, "kind = compose")?;
            writeln!(f, "stages = {}", actuation_to_text(&self.actuation))?;
        } else {
            let text = actuation_to_text(&self.actuation);
            let mut parts = text.split_whitespace();
            writeln!(f, "kind = {}", parts.next().unwrap_or("identity"))?;
            for kv in parts {
                let (k, v) = kv.split_once('=').expect("stage text is name=value");
                writeln!(f, "{k} = {v}")?;
            }
        }

        let s = &self.schedule;
        writeln!(f, "\n[schedule]")?;
        match s.kind {
            GraphKind::ErdosRenyi { p } => {
                writeln!(f, "kind = erdos_renyi")?;
                writeln!(f, "p = {p}")?;
            }
            GraphKind::Cycle => writeln!(f, "kind = cycle")?,
            GraphKind::Complete => writeln!(f, "kind = complete")?,
        }
        writeln!(f, "graphs = {}", s.count)?;
        writeln!(f, "weights = {}, {}", s.weights.lo, s.weights.hi)?;
        if let Some(d) = s.dwell {
            writeln!(f, "dwell = {d}")?;
        }
        if let Some(w) = s.window {
            writeln!(f, "window = {w}")?;
        }
        writeln!(f, "seed = {}", s.seed)?;
        writeln!(f, "max_attempts = {}", s.max_attempts)?;

        let m = &self.sim;
        writeln!(f, "\n[sim]")?;
        writeln!(f, "dt = {}", m.dt)?;
        writeln!(f, "horizon = {}", m.horizon)?;
        let integrator = match m.integrator {
            Integrator::Euler => "euler",
            Integrator::Rk4 => "rk4",
        };
        writeln!(f, "integrator = {integrator}")?;
        writeln!(f, "record_every = {}", m.record_every)?;
        writeln!(f, "tolerance = {}", m.tolerance)?;
        match m.plateau_steps {
            Some(k) => writeln!(f, "plateau_steps = {k}")?,
            None => writeln!(f, "plateau_steps = off")?,
        }
        match m.rate_clamp {
            Some(k) => writeln!(f, "rate_clamp = {k}")?,
            None => writeln!(f, "rate_clamp = off")?,
        }
        if let Some(v) = m.rate_limit {
            writeln!(f, "rate_limit = {v}")?;
        }
        writeln!(f, "feasibility_correction = {}", m.feasibility_correction)?;
        writeln!(f, "record_states = {}", m.record_states)?;

        let c = &self.checks;
        writeln!(f, "\n[checks]")?;
        for (k, v) in [
            ("feasibility", c.feasibility),
            ("sum_tolerance", c.sum_tolerance),
            ("lyapunov_monotone", c.lyapunov_monotone),
            ("final_lyapunov", c.final_lyapunov),
            ("final_state", c.final_state),
            ("grad_consensus", c.grad_consensus),
            ("max_rate", c.max_rate),
            ("box_slack", c.box_slack),
        ] {
            if let Some(v) = v {
                writeln!(f, "{k} = {v}")?;
            }
        }
        if c.robust_rate_bound {
            writeln!(f, "robust_rate_bound = true")?;
        }
        if c.connectivity {
            writeln!(f, "connectivity = true")?;
        }
        if let Some(dir) = &self.output {
            writeln!(f, "\n[output]")?;
            writeln!(f, "dir = {}", dir.display())?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- scenarios

pub struct BuiltinScenario {
    pub name: &'static str,
    pub description: &'static str,
    pub text: &'static str,
}

pub const BUILTIN_SCENARIOS: &[BuiltinScenario] = &[
    BuiltinScenario {
        name: "f2_quantized",
        description: "n=100, d=4 log-sum-exp costs, log quantizer (delta=1), 4 switching Erdos-Renyi graphs",
        text: include_str!("../scenarios/f2_quantized.cfg"),
    },
    BuiltinScenario {
        name: "f2_saturated",
        description: "n=100, d=4 log-sum-exp costs, saturation (kappa=1), 4 switching Erdos-Renyi graphs",
        text: include_str!("../scenarios/f2_saturated.cfg"),
    },
    BuiltinScenario {
        name: "f2_saturated_desk",
        description: "n=20 version of f2_saturated with convergence checks against the oracle",
        text: include_str!("../scenarios/f2_saturated_desk.cfg"),
    },
    BuiltinScenario {
        name: "agc_fixed_time",
        description: "10-generator dispatch of 800 MW, fixed-time actuation (0.7, 1.4), cyclic network",
        text: include_str!("../scenarios/agc_fixed_time.cfg"),
    },
    BuiltinScenario {
        name: "agc_robust",
        description: "10-generator dispatch of 800 MW, sign actuation (eps=0.5) within a 1 MW/min ramp limit",
        text: include_str!("../scenarios/agc_robust.cfg"),
    },
    BuiltinScenario {
        name: "agc_linear",
        description: "10-generator dispatch of 800 MW with the linear protocol g(z)=z as baseline",
        text: include_str!("../scenarios/agc_linear.cfg"),
    },
    BuiltinScenario {
        name: "decay_cycle",
        description: "x^2/2 costs, linear protocol on a static unit-weight 10-cycle (exponential decay rate)",
        text: include_str!("../scenarios/decay_cycle.cfg"),
    },
];

pub fn builtin_scenario(name: &str) -> Option<&'static BuiltinScenario> {
    BUILTIN_SCENARIOS.iter().find(|s| s.name == name)
}

/// Loads a config file, or a built-in scenario when `spec` names one and is
/// not an existing path.
pub fn resolve_config(spec: &str) -> Result<ExperimentConfig> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Some(s) = builtin_scenario(spec) {
            return ExperimentConfig::parse(s.text);
        }
    }
    ExperimentConfig::load(path)
}

// ---------------------------------------------------------------- building

/// Feasible starting point: either `x_i = b / Σ a_j` for every agent, or a
/// random perturbation of it projected back onto `X a = b`.
pub fn init_feasible(problem: &AllocationProblem, mode: InitMode, spread: f64, seed: u64) -> Result<StateMatrix> {
    let sum_a: f64 = problem.a().iter().sum();
    if sum_a.abs() <= f64::EPSILON * problem.a().iter().map(|v| v.abs()).sum::<f64>().max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateCoupling("coupling weights sum to zero".into()));
    }
    let (d, n) = (problem.d(), problem.n());
    let share: Vec<f64> = problem.b().iter().map(|bp| bp / sum_a).collect();
    let mut x = StateMatrix::zeros(d, n);
    for i in 0..n {
        x.col_mut(i).copy_from_slice(&share);
    }
    if mode == InitMode::RandomFeasible {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..n {
            for v in x.col_mut(i) {
                *v += spread * rng.random_range(-1.0..=1.0);
            }
        }
        dynamics::project_feasible(&mut x, problem);
    }
    Ok(x)
}

pub fn build_problem(spec: &ProblemSpec) -> Result<AllocationProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a = match &spec.a {
        CouplingSpec::Uniform(v) => vec![*v; spec.n],
        CouplingSpec::Range(lo, hi) => (0..spec.n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect(),
        CouplingSpec::Explicit(v) => v.clone(),
    };
    let cost_seed = rng.random::<u64>();
    let mut costs = match &spec.cost {
        CostSpec::F2(r) => costs::make_f2_costs(spec.n, spec.d, *r, cost_seed)?,
        CostSpec::Generator(r) => costs::make_generator_costs(spec.n, *r, cost_seed)?,
        CostSpec::Quadratic { gamma, beta, alpha } => vec![LocalCost::quadratic(*gamma, *beta, *alpha)?; spec.n],
    };
    if let Some(p) = &spec.penalty {
        costs = costs
            .into_iter()
            .map(|c| costs::penalize(c, vec![p.lower; spec.d], vec![p.upper; spec.d], p.eps, p.mu))
            .collect::<Result<_>>()?;
    }
    AllocationProblem::new(costs, a, spec.b.clone())
}

pub fn build_schedule(spec: &ScheduleSpec, n: usize) -> Result<GraphSchedule> {
    let graphs = match spec.kind {
        GraphKind::ErdosRenyi { p } => {
            if spec.count > 1 {
                netgraph::build_switching_erdos_renyi(n, spec.count, p, spec.weights, spec.seed, spec.max_attempts)?
            } else {
                vec![netgraph::build_erdos_renyi(n, p, spec.weights, spec.seed)?]
            }
        }
        GraphKind::Cycle => (0..spec.count as u64)
            .map(|k| netgraph::build_cycle(n, spec.weights, spec.seed.wrapping_add(k)))
            .collect::<Result<_>>()?,
        GraphKind::Complete => (0..spec.count as u64)
            .map(|k| netgraph::build_erdos_renyi(n, 1.0, spec.weights, spec.seed.wrapping_add(k)))
            .collect::<Result<_>>()?,
    };
    match spec.dwell {
        Some(dwell) => GraphSchedule::new(graphs, dwell),
        None => Ok(GraphSchedule::constant(graphs.into_iter().next().expect("at least one graph"))),
    }
}

/// Everything needed for a run, materialized from a config. Fields are
/// public so tests can tamper with a piece before executing.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: AllocationProblem,
    pub x0: StateMatrix,
    pub sim: SimConfig,
    pub oracle: KktSolution,
}

pub fn build(config: &ExperimentConfig) -> Result<Experiment> {
    let problem = build_problem(&config.problem)?;
    let schedule = build_schedule(&config.schedule, config.problem.n)?;
    let x0 = init_feasible(
        &problem,
        config.problem.init,
        config.problem.init_spread,
        config.problem.seed.wrapping_add(2),
    )?;
    let oracle = oracle::solve_kkt(&problem, oracle::DEFAULT_TOL)?;
    let m = &config.sim;
    let mut sim = SimConfig::new(m.dt, m.horizon, schedule, config.actuation.clone());
    sim.integrator = m.integrator;
    sim.record_every = m.record_every;
    sim.tolerance = m.tolerance;
    sim.plateau_steps = m.plateau_steps;
    sim.rate_clamp = m.rate_clamp;
    sim.rate_limit = m.rate_limit.or(config.checks.max_rate);
    sim.feasibility_correction = m.feasibility_correction;
    sim.record_states = m.record_states || config.checks.final_state.is_some();
    sim.f_star = Some(oracle.static_value(&problem));
    Ok(Experiment {
        config: config.clone(),
        problem,
        x0,
        sim,
        oracle,
    })
}

// ---------------------------------------------------------------- running

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub name: String,
    pub steps: usize,
    pub final_time: f64,
    pub termination: Termination,
    pub wall_seconds: f64,
    pub initial_lyapunov: f64,
    pub final_lyapunov: f64,
    pub final_feasibility: f64,
    pub max_feasibility: f64,
    pub final_grad_consensus: f64,
    pub final_state_error: f64,
    pub peak_rate: f64,
    pub rate_violations: usize,
    pub clamped_steps: usize,
    pub checks: Vec<CheckResult>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failing(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Human-readable summary followed by a `key=value` block.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "run {}: {} steps, t = {}, stopped by {:?}", self.name, self.steps, self.final_time, self.termination);
        let _ = writeln!(out, "  lyapunov        {:.6e} -> {:.6e}", self.initial_lyapunov, self.final_lyapunov);
        let _ = writeln!(out, "  feasibility     final {:.3e}, max {:.3e}", self.final_feasibility, self.max_feasibility);
        let _ = writeln!(out, "  grad consensus  {:.3e}", self.final_grad_consensus);
        let _ = writeln!(out, "  |X - X*|        {:.3e}", self.final_state_error);
        let _ = writeln!(out, "  peak rate       {:.6} ({} violations, {} clamped steps)", self.peak_rate, self.rate_violations, self.clamped_steps);
        for c in &self.checks {
            let _ = writeln!(
                out,
                "  [{}] {:<20} value {:.6e} limit {:.6e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.limit
            );
        }
        let _ = writeln!(out, "---");
        let kv: [(&str, String); 14] = [
            ("name", self.name.clone()),
            ("steps", self.steps.to_string()),
            ("final_time", self.final_time.to_string()),
            ("termination", format!("{:?}", self.termination).to_lowercase()),
            ("wall_seconds", self.wall_seconds.to_string()),
            ("initial_lyapunov", self.initial_lyapunov.to_string()),
            ("final_lyapunov", self.final_lyapunov.to_string()),
            ("final_feasibility", self.final_feasibility.to_string()),
            ("max_feasibility", self.max_feasibility.to_string()),
            ("final_grad_consensus", self.final_grad_consensus.to_string()),
            ("final_state_error", self.final_state_error.to_string()),
            ("peak_rate", self.peak_rate.to_string()),
            ("rate_violations", self.rate_violations.to_string()),
            ("clamped_steps", self.clamped_steps.to_string()),
        ];
        for (k, v) in kv {
            let _ = writeln!(out, "{k}={v}");
        }
        for c in &self.checks {
            let _ = writeln!(out, "check.{}={}", c.name, if c.passed { "pass" } else { "fail" });
        }
        let _ = writeln!(out, "passed={}", self.passed());
        out
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub report: RunReport,
}

/// Largest applied rate a bounded actuation allows over the schedule:
/// `max_i (1/|a_i|) Σ_j W_ij · sup|g|`.
pub fn actuation_rate_bound(exp: &Experiment) -> Option<f64> {
    let bound = exp.sim.actuation.bound()?;
    let a = exp.problem.a();
    let worst = exp
        .sim
        .schedule
        .graphs()
        .iter()
        .flat_map(|g| (0..g.n()).map(move |i| g.weighted_degree(i) / a[i].abs()))
        .fold(0.0, f64::max);
    Some(worst * bound)
}

pub fn execute(exp: &Experiment) -> Result<RunOutput> {
    let started = Instant::now();
    let traj = dynamics::simulate(&exp.problem, &exp.x0, &exp.sim)?;
    let wall_seconds = started.elapsed().as_secs_f64();
    let report = evaluate(exp, &traj, wall_seconds);
    Ok(RunOutput { trajectory: traj, report })
}

fn evaluate(exp: &Experiment, traj: &Trajectory, wall_seconds: f64) -> RunReport {
    let first = traj.diagnostics[0];
    let last = *traj.final_diagnostics();
    let final_state_error = traj.final_state.max_abs_diff(&exp.oracle.x_star);
    let c = &exp.config.checks;
    let b_scale = 1.0 + exp.problem.b_norm();
    let mut checks = Vec::new();
    let mut push = |name, value: f64, limit: f64| {
        checks.push(CheckResult {
            name,
            passed: value <= limit,
            value,
            limit,
        })
    };

    if let Some(tol) = c.feasibility {
        push("feasibility", traj.peak_feasibility, tol * b_scale);
    }
    if let Some(tol) = c.sum_tolerance {
        push("sum_tolerance", traj.peak_feasibility, tol);
    }
    if let Some(slack) = c.lyapunov_monotone {
        let rise = traj
            .diagnostics
            .windows(2)
            .map(|w| w[1].lyapunov - w[0].lyapunov)
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0);
        push("lyapunov_monotone", rise, slack * first.lyapunov.abs());
    }
    if let Some(rel) = c.final_lyapunov {
        push("final_lyapunov", last.lyapunov, rel * first.lyapunov.abs());
    }
    if let Some(tol) = c.final_state {
        push("final_state", final_state_error, tol);
    }
    if let Some(tol) = c.grad_consensus {
        push("grad_consensus", last.grad_consensus, tol);
    }
    if let Some(limit) = c.max_rate {
        push("max_rate", traj.peak_rate, limit);
    }
    if let (Some(slack), Some(pen)) = (c.box_slack, &exp.config.problem.penalty) {
        let excess = traj
            .final_state
            .as_slice()
            .iter()
            .map(|&v| (pen.lower - v).max(v - pen.upper).max(0.0))
            .fold(0.0, f64::max);
        push("box", excess, slack);
    }
    if c.robust_rate_bound {
        let bound = actuation_rate_bound(exp).unwrap_or(f64::NAN);
        push("robust_rate_bound", traj.peak_rate, bound * (1.0 + 1e-12));
    }
    if c.connectivity {
        let window = exp.config.schedule.window.unwrap_or_else(|| exp.sim.schedule.period());
        let ok = if window.is_finite() {
            exp.sim.schedule.check_uniform_connectivity(window).unwrap_or(false)
        } else {
            exp.sim.schedule.graphs()[0].is_connected()
        };
        push("connectivity", if ok { 0.0 } else { 1.0 }, 0.0);
    }

    RunReport {
        name: exp.config.name.clone(),
        steps: traj.steps,
        final_time: traj.final_time(),
        termination: traj.termination,
        wall_seconds,
        initial_lyapunov: first.lyapunov,
        final_lyapunov: last.lyapunov,
        final_feasibility: last.feasibility,
        max_feasibility: traj.peak_feasibility,
        final_grad_consensus: last.grad_consensus,
        final_state_error,
        peak_rate: traj.peak_rate,
        rate_violations: traj.rate_violations,
        clamped_steps: traj.clamped_steps,
        checks,
    }
}

/// Writes `<name>.trajectory.csv`, `<name>.oracle.csv`, `<name>.report.txt`
/// and one `<name>.graph<k>.txt` per scheduled graph into `dir`.
pub fn write_artifacts(exp: &Experiment, output: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let name = &exp.config.name;
    let file = |suffix: &str| dir.join(format!("{name}.{suffix}"));
    output
        .trajectory
        .write_csv(fs::File::create(file("trajectory.csv"))?, exp.config.sim.record_states)?;
    exp.oracle.write_csv(fs::File::create(file("oracle.csv"))?)?;
    fs::write(file("report.txt"), output.report.render())?;
    for (k, g) in exp.sim.schedule.graphs().iter().enumerate() {
        fs::write(file(&format!("graph{k}.txt")), g.to_triples())?;
    }
    Ok(())
}

/// Builds, simulates and (when an output directory is given or configured)
/// writes artifacts.
pub fn run(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutput> {
    let exp = build(config)?;
    let output = execute(&exp)?;
    if let Some(dir) = out_dir.or(config.output.as_deref()) {
        write_artifacts(&exp, &output, dir)?;
    }
    Ok(output)
}

/// Process exit status for a finished run.
pub fn check(report: &RunReport) -> i32 {
    if report.passed() {
        EXIT_PASS
    } else {
        EXIT_CHECK_FAILED
    }
}

/// Exit status for an error: configuration problems map to
/// [`EXIT_CONFIG`], everything that fails while running to [`EXIT_RUNTIME`].
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Parameter(_) | Error::Dimension(_) | Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

pub fn connectivity_window(config: &ExperimentConfig, schedule: &GraphSchedule) -> f64 {
    config.schedule.window.unwrap_or_else(|| schedule.period())
}

/// Weight matrices of the graphs used by a config, mostly for inspection.
pub fn scheduled_graphs(config: &ExperimentConfig) -> Result<Vec<WeightedGraph>> {
    Ok(build_schedule(&config.schedule, config.problem.n)?.graphs().to_vec())
}
