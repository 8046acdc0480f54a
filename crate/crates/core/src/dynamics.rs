//! The distributed allocation flow
//!
//! ```text
//! ẋ_i = -(1/a_i) Σ_j W_ij g(∇f̃_i(x_i)/a_i - ∇f̃_j(x_j)/a_j)
//! ```
//!
//! together with fixed-step integration over a switching graph schedule and
//! the run-time diagnostics recorded along a trajectory.
//!
//! Because `W` is symmetric and `g` is odd, `Σ_i a_i ẋ_i = 0`: the weighted
//! sum `X a` never moves, so a feasible start stays feasible. Each agent only
//! reads the scaled gradients of its current neighbors.

use std::io::Write;

use crate::actuation::{Actuation, SignMap};
use crate::costs::LocalCost;
use crate::error::{Error, Result};
use crate::netgraph::{GraphSchedule, WeightedGraph};
use crate::oracle;

/// Coupling weights closer to zero than this are rejected.
pub const MIN_COUPLING: f64 = 1e-6;

/// `d x n` state, column `i` is agent `i`. Stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    d: usize,
    n: usize,
    data: Vec<f64>,
}

impl StateMatrix {
    pub fn zeros(d: usize, n: usize) -> Self {
        Self {
            d,
            n,
            data: vec![0.0; d * n],
        }
    }

    /// From column-major data (agent after agent).
    pub fn from_columns(d: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != d * n {
            return Err(Error::dim(format!("{} entries for a {d} x {n} state", data.len())));
        }
        Ok(Self { d, n, data })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn col(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn col_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn get(&self, p: usize, i: usize) -> f64 {
        self.data[i * self.d + p]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn columns(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.d)
    }

    /// `X a`.
    pub fn weighted_sum(&self, a: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for (col, &ai) in self.columns().zip(a) {
            for (o, &v) in out.iter_mut().zip(col) {
                *o += v * ai;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &StateMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn axpy(&mut self, alpha: f64, other: &StateMatrix) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += alpha * y;
        }
    }
}

/// `min Σ_i f_i(x_i, t)` subject to `X a = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    costs: Vec<LocalCost>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl AllocationProblem {
    pub fn new(costs: Vec<LocalCost>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::param("allocation problem needs at least one agent"));
        }
        if a.len() != costs.len() {
            return Err(Error::dim(format!("{} coupling weights for {} agents", a.len(), costs.len())));
        }
        let d = b.len();
        if let Some(i) = costs.iter().position(|c| c.dim() != d) {
            return Err(Error::dim(format!(
                "cost of agent {i} has dimension {}, resource vector has {d}",
                costs[i].dim()
            )));
        }
        if let Some(i) = a.iter().position(|ai| !(ai.abs() > MIN_COUPLING) || !ai.is_finite()) {
            return Err(Error::param(format!("coupling weight a_{i} = {} is too close to zero", a[i])));
        }
        Ok(Self { costs, a, b })
    }

    pub fn n(&self) -> usize {
        self.costs.len()
    }

    pub fn d(&self) -> usize {
        self.b.len()
    }

    pub fn costs(&self) -> &[LocalCost] {
        &self.costs
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn b_norm(&self) -> f64 {
        norm2(&self.b)
    }

    fn check_state(&self, x: &StateMatrix) -> Result<()> {
        if x.d != self.d() || x.n != self.n() {
            return Err(Error::dim(format!(
                "state is {} x {}, problem is {} x {}",
                x.d,
                x.n,
                self.d(),
                self.n()
            )));
        }
        Ok(())
    }

    /// Columns `∇f̃_i(x_i) / a_i`.
    pub fn scaled_gradients(&self, x: &StateMatrix) -> StateMatrix {
        let mut psi = StateMatrix::zeros(self.d(), self.n());
        for (i, (cost, &ai)) in self.costs.iter().zip(&self.a).enumerate() {
            let out = psi.col_mut(i);
            cost.static_part.gradient_into(x.col(i), out);
            for v in out.iter_mut() {
                *v /= ai;
            }
        }
        psi
    }

    /// `Σ_i f̃_i(x_i)`.
    pub fn static_value(&self, x: &StateMatrix) -> f64 {
        self.costs.iter().zip(x.columns()).map(|(c, xi)| c.static_value(xi)).sum()
    }

    /// `Σ_i f̂_i(t)`.
    pub fn time_value(&self, t: f64) -> f64 {
        self.costs.iter().map(|c| c.time_value(t)).sum()
    }

    pub fn total_cost(&self, x: &StateMatrix, t: f64) -> f64 {
        self.static_value(x) + self.time_value(t)
    }

    pub fn is_separable(&self) -> bool {
        self.costs.iter().all(|c| c.static_part.is_separable())
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rhs_from_psi<G: SignMap + ?Sized>(psi: &StateMatrix, graph: &WeightedGraph, a: &[f64], g: &G, out: &mut StateMatrix) {
    let d = psi.d;
    let mut diff = vec![0.0; d];
    let mut gz = vec![0.0; d];
    for i in 0..psi.n {
        let psi_i = psi.col(i);
        let acc = out.col_mut(i);
        acc.fill(0.0);
        for &(j, w) in graph.neighbors(i) {
            for ((z, &u), &v) in diff.iter_mut().zip(psi_i).zip(psi.col(j)) {
                *z = u - v;
            }
            g.map_into(&diff, &mut gz);
            for (s, &v) in acc.iter_mut().zip(&gz) {
                *s += w * v;
            }
        }
        let scale = -1.0 / a[i];
        for s in acc.iter_mut() {
            *s *= scale;
        }
    }
}

/// Time derivative of the allocation flow at `x` over a frozen graph.
pub fn rhs<G: SignMap + ?Sized>(x: &StateMatrix, graph: &WeightedGraph, problem: &AllocationProblem, g: &G) -> StateMatrix {
    let psi = problem.scaled_gradients(x);
    let mut out = StateMatrix::zeros(x.d, x.n);
    rhs_from_psi(&psi, graph, &problem.a, g, &mut out);
    out
}

/// `‖X a - b‖₂`.
pub fn feasibility_residual(x: &StateMatrix, problem: &AllocationProblem) -> f64 {
    let xa = x.weighted_sum(&problem.a);
    xa.iter()
        .zip(&problem.b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

fn spread(psi: &StateMatrix) -> f64 {
    (0..psi.d)
        .map(|p| {
            let (lo, hi) = psi
                .columns()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c[p]), hi.max(c[p])));
            hi - lo
        })
        .fold(0.0, f64::max)
}

/// `max_{i,j} ‖∇f̃_i/a_i - ∇f̃_j/a_j‖_∞`; zero exactly at the optimum.
pub fn gradient_consensus_residual(x: &StateMatrix, problem: &AllocationProblem) -> f64 {
    spread(&problem.scaled_gradients(x))
}

/// `Σ_i f̃_i(x_i) - f*`. The time parts cancel, so no `t` is needed.
pub fn lyapunov_residual(x: &StateMatrix, problem: &AllocationProblem, f_star: f64) -> f64 {
    problem.static_value(x) - f_star
}

/// Absolute gap in the pairwise summation identity
///
/// ```text
/// Σ_i ψ_iᵀ Σ_j W_ij g(ψ_j - ψ_i) = -Σ_{i,j} (W_ij / 2) (ψ_j - ψ_i)ᵀ g(ψ_j - ψ_i)
/// ```
///
/// returned together with the magnitude of the summed terms, which bounds
/// the achievable round-off.
pub fn sum_identity_gap<G: SignMap + ?Sized>(psi: &[Vec<f64>], w: &WeightedGraph, g: &G) -> (f64, f64) {
    let n = psi.len();
    let d = psi.first().map_or(0, Vec::len);
    let mut diff = vec![0.0; d];
    let mut gz = vec![0.0; d];
    let (mut lhs, mut rhs) = (0.0, 0.0);
    let mut magnitude = 0.0;
    for i in 0..n {
        for j in 0..n {
            let wij = w.weight(i, j);
            if wij == 0.0 {
                continue;
            }
            for ((z, &u), &v) in diff.iter_mut().zip(&psi[j]).zip(&psi[i]) {
                *z = u - v;
            }
            g.map_into(&diff, &mut gz);
            let (mut l, mut r, mut m) = (0.0, 0.0, 0.0);
            for p in 0..d {
                l += psi[i][p] * gz[p];
                r += diff[p] * gz[p];
                m += psi[i][p].abs() * gz[p].abs() + 0.5 * diff[p].abs() * gz[p].abs();
            }
            lhs += wij * l;
            rhs -= 0.5 * wij * r;
            magnitude += wij * m;
        }
    }
    ((lhs - rhs).abs(), magnitude)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Euler,
    Rk4,
}

impl std::str::FromStr for Integrator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Integrator::Euler),
            "rk4" => Ok(Integrator::Rk4),
            other => Err(Error::param(format!("unknown integrator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub integrator: Integrator,
    pub schedule: GraphSchedule,
    pub actuation: Actuation,
    /// Steps between recorded samples.
    pub record_every: usize,
    /// Rank-one projection back onto `X a = b` after each step.
    pub feasibility_correction: bool,
    /// Stop once the gradient-consensus residual drops to this value.
    pub tolerance: f64,
    /// Stop when the residual has not improved for this many steps.
    pub plateau_steps: Option<usize>,
    /// Caps `‖ΔX‖_∞ <= factor · dt · (initial rhs scale)` per step.
    pub rate_clamp: Option<f64>,
    /// Counted in [`Trajectory::rate_violations`] when the applied rate exceeds it.
    pub rate_limit: Option<f64>,
    /// Optimal static value from the oracle; filled in automatically for
    /// separable problems when absent.
    pub f_star: Option<f64>,
    pub record_states: bool,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, schedule: GraphSchedule, actuation: Actuation) -> Self {
        let plateau_steps = actuation.is_discontinuous().then_some(1000);
        Self {
            dt,
            horizon,
            integrator: Integrator::Euler,
            schedule,
            actuation,
            record_every: 1,
            feasibility_correction: false,
            tolerance: 1e-6,
            plateau_steps,
            rate_clamp: Some(10.0),
            rate_limit: None,
            f_star: None,
            record_states: true,
        }
    }

    /// Steps per dwell period, `None` for a static schedule.
    fn steps_per_dwell(&self) -> Result<Option<usize>> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::param(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(Error::param(format!("horizon must be nonnegative, got {}", self.horizon)));
        }
        if self.record_every == 0 {
            return Err(Error::param("record_every must be at least 1"));
        }
        let dwell = self.schedule.dwell();
        if !dwell.is_finite() {
            return Ok(None);
        }
        let ratio = dwell / self.dt;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::param(format!(
                "time step {} must divide the dwell time {dwell}",
                self.dt
            )));
        }
        Ok(Some(k as usize))
    }

    fn total_steps(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

/// One integration step over the graph active at `t`, without rate clamping.
pub fn step(x: &StateMatrix, t: f64, config: &SimConfig, problem: &AllocationProblem) -> Result<StateMatrix> {
    problem.check_state(x)?;
    let graph = config.schedule.graph_at(t);
    let mut ws = Workspace::new(problem.d(), problem.n());
    let mut next = x.clone();
    advance(&mut next, t, config, problem, graph, None, &mut ws)?;
    Ok(next)
}

struct Workspace {
    k: [StateMatrix; 4],
    stage: StateMatrix,
    delta: StateMatrix,
}

impl Workspace {
    fn new(d: usize, n: usize) -> Self {
        let z = StateMatrix::zeros(d, n);
        Self {
            k: [z.clone(), z.clone(), z.clone(), z.clone()],
            stage: z.clone(),
            delta: z,
        }
    }
}

/// Applies one step in place. Returns the applied increment's largest
/// per-agent rate and whether the clamp was active.
fn advance(
    x: &mut StateMatrix,
    t: f64,
    config: &SimConfig,
    problem: &AllocationProblem,
    graph: &WeightedGraph,
    rate_cap: Option<f64>,
    ws: &mut Workspace,
) -> Result<(f64, bool)> {
    let dt = config.dt;
    let g = &config.actuation;
    let a = &problem.a;
    match config.integrator {
        Integrator::Euler => {
            rhs_from_psi(&problem.scaled_gradients(x), graph, a, g, &mut ws.delta);
        }
        Integrator::Rk4 => {
            rhs_from_psi(&problem.scaled_gradients(x), graph, a, g, &mut ws.k[0]);
            for (s, h) in [(1usize, 0.5), (2, 0.5), (3, 1.0)] {
                ws.stage.data.copy_from_slice(&x.data);
                ws.stage.axpy(h * dt, &ws.k[s - 1]);
                let psi = problem.scaled_gradients(&ws.stage);
                rhs_from_psi(&psi, graph, a, g, &mut ws.k[s]);
            }
            for (idx, v) in ws.delta.data.iter_mut().enumerate() {
                *v = (ws.k[0].data[idx] + 2.0 * ws.k[1].data[idx] + 2.0 * ws.k[2].data[idx] + ws.k[3].data[idx]) / 6.0;
            }
        }
    }
    // ws.delta now holds the slope; scale uniformly so that X a is preserved
    let slope_max = ws.delta.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut factor = dt;
    let mut clamped = false;
    if let Some(cap) = rate_cap {
        if slope_max > cap {
            factor = dt * cap / slope_max;
            clamped = true;
        }
    }
    x.axpy(factor, &ws.delta);
    if config.feasibility_correction {
        project_feasible(x, problem);
    }
    if !x.is_finite() {
        return Err(Error::Integration {
            t: t + dt,
            reason: "state became non-finite".into(),
        });
    }
    Ok((slope_max * factor / dt, clamped))
}

/// `X ← X - ((X a - b) / aᵀa) aᵀ`.
pub fn project_feasible(x: &mut StateMatrix, problem: &AllocationProblem) {
    let xa = x.weighted_sum(&problem.a);
    let aa: f64 = problem.a.iter().map(|v| v * v).sum();
    let r: Vec<f64> = xa.iter().zip(&problem.b).map(|(u, v)| (u - v) / aa).collect();
    for (i, &ai) in problem.a.iter().enumerate() {
        for (v, rp) in x.col_mut(i).iter_mut().zip(&r) {
            *v -= rp * ai;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    /// `F(X, t)` including the time-varying part.
    pub cost: f64,
    /// `F*(t)`, the optimal value at time `t`.
    pub f_star: f64,
    pub lyapunov: f64,
    pub feasibility: f64,
    pub grad_consensus: f64,
    /// Largest `‖ẋ_i‖_∞` applied since the previous sample.
    pub max_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Horizon,
    Converged,
    Plateau,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Empty unless `record_states` was set.
    pub states: Vec<StateMatrix>,
    pub diagnostics: Vec<Diagnostics>,
    pub final_state: StateMatrix,
    pub termination: Termination,
    pub steps: usize,
    pub clamped_steps: usize,
    pub rate_violations: usize,
    /// Largest applied rate over every step of the run.
    pub peak_rate: f64,
    /// Largest feasibility residual over every step of the run.
    pub peak_feasibility: f64,
}

impl Trajectory {
    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one sample")
    }

    pub fn final_diagnostics(&self) -> &Diagnostics {
        self.diagnostics.last().expect("trajectory has at least one sample")
    }

    /// First sampled time at which the gradient-consensus residual is at or
    /// below `level`.
    pub fn time_to_residual(&self, level: f64) -> Option<f64> {
        self.times
            .iter()
            .zip(&self.diagnostics)
            .find(|(_, d)| d.grad_consensus <= level)
            .map(|(t, _)| *t)
    }

    /// Writes `t,F,F_star,lyapunov,feas_residual,grad_consensus,max_rate`,
    /// followed by `x_{p}_{i}` columns when states were recorded and
    /// `with_states` is set.
    pub fn write_csv<W: Write>(&self, out: W, with_states: bool) -> Result<()> {
        let with_states = with_states && !self.states.is_empty();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["t", "F", "F_star", "lyapunov", "feas_residual", "grad_consensus", "max_rate"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        if with_states {
            let (d, n) = (self.final_state.d, self.final_state.n);
            for i in 0..n {
                for p in 0..d {
                    header.push(format!("x_{p}_{i}"));
                }
            }
        }
        w.write_record(&header)?;
        for (k, (t, diag)) in self.times.iter().zip(&self.diagnostics).enumerate() {
            let mut row: Vec<String> = [
                *t,
                diag.cost,
                diag.f_star,
                diag.lyapunov,
                diag.feasibility,
                diag.grad_consensus,
                diag.max_rate,
            ]
            .iter()
            .map(|v| v.to_string())
            .collect();
            if with_states {
                row.extend(self.states[k].as_slice().iter().map(|v| v.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Integrates from a feasible `x0` until the horizon, convergence of the
/// gradient-consensus residual to `config.tolerance`, or a plateau.
pub fn simulate(problem: &AllocationProblem, x0: &StateMatrix, config: &SimConfig) -> Result<Trajectory> {
    problem.check_state(x0)?;
    if config.schedule.n() != problem.n() {
        return Err(Error::dim(format!(
            "schedule has {} nodes, problem has {} agents",
            config.schedule.n(),
            problem.n()
        )));
    }
    let steps_per_dwell = config.steps_per_dwell()?;
    let residual0 = feasibility_residual(x0, problem);
    let limit = 1e-9 * (1.0 + problem.b_norm());
    if !(residual0 <= limit) {
        return Err(Error::InfeasibleStart { residual: residual0, limit });
    }
    let f_star = match config.f_star {
        Some(v) => v,
        None if problem.is_separable() => oracle::solve_kkt(problem, oracle::DEFAULT_TOL)?.static_value(problem),
        None => f64::NAN,
    };

    let graphs = config.schedule.graphs();
    let graph_index = |step: usize| match steps_per_dwell {
        Some(spd) => (step / spd) % graphs.len(),
        None => 0,
    };

    let rate_cap = match config.rate_clamp {
        Some(factor) => {
            let psi0 = problem.scaled_gradients(x0);
            let mut tmp = StateMatrix::zeros(problem.d(), problem.n());
            let scale = graphs.iter().fold(0.0f64, |m, gr| {
                rhs_from_psi(&psi0, gr, &problem.a, &config.actuation, &mut tmp);
                tmp.data.iter().fold(m, |m, v| m.max(v.abs()))
            });
            (scale > 0.0).then_some(factor * scale)
        }
        None => None,
    };

    let mut x = x0.clone();
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        diagnostics: Vec::new(),
        final_state: x0.clone(),
        termination: Termination::Horizon,
        steps: 0,
        clamped_steps: 0,
        rate_violations: 0,
        peak_rate: 0.0,
        peak_feasibility: residual0,
    };

    let initial_rate = {
        let r = rhs(x0, &graphs[graph_index(0)], problem, &config.actuation);
        let m = r.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        rate_cap.map_or(m, |c| m.min(c))
    };
    let mut residual = gradient_consensus_residual(&x, problem);
    record(&mut traj, problem, &x, 0.0, f_star, residual, initial_rate, config.record_states);

    let total = config.total_steps();
    let mut ws = Workspace::new(problem.d(), problem.n());
    let mut rate_since_sample = 0.0f64;
    let mut best = residual;
    let mut stale = 0usize;
    let mut converged = residual <= config.tolerance;
    if converged {
        traj.termination = Termination::Converged;
    }
    let mut k = 0usize;
    while k < total && !converged {
        let t = k as f64 * config.dt;
        let graph = &graphs[graph_index(k)];
        let (rate, clamped) = advance(&mut x, t, config, problem, graph, rate_cap, &mut ws)?;
        k += 1;
        traj.clamped_steps += clamped as usize;
        if config.rate_limit.is_some_and(|lim| rate > lim) {
            traj.rate_violations += 1;
        }
        rate_since_sample = rate_since_sample.max(rate);
        traj.peak_rate = traj.peak_rate.max(rate);
        traj.peak_feasibility = traj.peak_feasibility.max(feasibility_residual(&x, problem));

        residual = gradient_consensus_residual(&x, problem);
        if residual <= config.tolerance {
            converged = true;
            traj.termination = Termination::Converged;
        }
        if let Some(window) = config.plateau_steps {
            if residual < best * (1.0 - 1e-9) {
                best = residual;
                stale = 0;
            } else {
                stale += 1;
                if stale >= window && !converged {
                    traj.termination = Termination::Plateau;
                }
            }
        }
        let stop = converged || traj.termination == Termination::Plateau || k == total;
        if k % config.record_every == 0 || stop {
            let tk = k as f64 * config.dt;
            record(&mut traj, problem, &x, tk, f_star, residual, rate_since_sample, config.record_states);
            rate_since_sample = 0.0;
        }
        if traj.termination == Termination::Plateau {
            break;
        }
    }
    traj.steps = k;
    traj.final_state = x;
    Ok(traj)
}

#[allow(clippy::too_many_arguments)]
fn record(
    traj: &mut Trajectory,
    problem: &AllocationProblem,
    x: &StateMatrix,
    t: f64,
    f_star: f64,
    residual: f64,
    max_rate: f64,
    keep_state: bool,
) {
    let time_value = problem.time_value(t);
    let static_value = problem.static_value(x);
    traj.times.push(t);
    traj.diagnostics.push(Diagnostics {
        cost: static_value + time_value,
        f_star: f_star + time_value,
        lyapunov: static_value - f_star,
        feasibility: feasibility_residual(x, problem),
        grad_consensus: residual,
        max_rate,
    });
    if keep_state {
        traj.states.push(x.clone());
    }
}
