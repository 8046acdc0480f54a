//! Centralized ground truth for the allocation problem.
//!
//! At the optimum every scaled gradient agrees: `∇f̃_i(x*_i) = φ* a_i` for a
//! common multiplier `φ*`. For coordinate-separable costs this decouples
//! into one scalar root-find per coordinate `p`:
//!
//! ```text
//! h(φ) = Σ_i a_i x_i(φ a_i) - b_p,    x_i(s) solves ∂_p f̃_i(x) = s
//! ```
//!
//! `h` is strictly increasing, so the outer search is a plain bisection and
//! each inner inversion is a bracketed Newton/bisection hybrid. Nothing here
//! touches the distributed dynamics.

use std::io::Write;

use crate::costs::StaticCost;
use crate::dynamics::{AllocationProblem, StateMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-12;

const MAX_DOUBLINGS: u32 = 60;

/// Finds `x` with `∂f̃/∂x_p(x) = target` to `1e-12 (1 + |target|)`.
pub fn invert_gradient(cost: &StaticCost, p: usize, target: f64) -> Result<f64> {
    invert_gradient_from(cost, p, target, 1.0)
}

fn invert_gradient_from(cost: &StaticCost, p: usize, target: f64, seed_width: f64) -> Result<f64> {
    let f = |x: f64| cost.partial(p, x) - target;
    let tol = 1e-12 * (1.0 + target.abs());
    let (lo, hi) = grow_bracket(&f, seed_width).ok_or(Error::UnboundedGradient { target })?;
    let (mut lo, mut hi) = (lo, hi);

    let mut x = lo + 0.5 * (hi - lo);
    let mut best = (f64::INFINITY, x);
    for _ in 0..400 {
        let fx = f(x);
        if fx.abs() < best.0 {
            best = (fx.abs(), x);
        }
        if fx.abs() <= tol {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        let h = 1e-7 * x.abs().max(1.0);
        let slope = (f(x + h) - f(x - h)) / (2.0 * h);
        let newton = x - fx / slope;
        x = if slope > 0.0 && newton > lo && newton < hi { newton } else { mid };
    }
    for end in [lo, hi] {
        let fe = f(end).abs();
        if fe < best.0 {
            best = (fe, end);
        }
    }
    Ok(best.1)
}

/// Expands `[-w, w]` by doubling until `f(lo) <= 0 <= f(hi)`.
fn grow_bracket(f: &impl Fn(f64) -> f64, width: f64) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (-width, width);
    let mut doublings = 0;
    while f(hi) < 0.0 {
        if doublings >= MAX_DOUBLINGS {
            return None;
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
    }
    doublings = 0;
    while f(lo) > 0.0 {
        if doublings >= MAX_DOUBLINGS {
            return None;
        }
        hi = lo;
        lo *= 2.0;
        doublings += 1;
    }
    (f(lo).is_finite() && f(hi).is_finite()).then_some((lo, hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktSolution {
    pub x_star: StateMatrix,
    pub phi_star: Vec<f64>,
    /// Achieved `‖X* a - b‖₂`.
    pub residual: f64,
}

impl KktSolution {
    /// `Σ_i f̃_i(x*_i)`.
    pub fn static_value(&self, problem: &AllocationProblem) -> f64 {
        problem.static_value(&self.x_star)
    }

    /// `max_i ‖∇f̃_i(x*_i) - φ* a_i‖_∞`.
    pub fn stationarity_error(&self, problem: &AllocationProblem) -> f64 {
        problem
            .costs()
            .iter()
            .zip(problem.a())
            .enumerate()
            .map(|(i, (c, &ai))| {
                c.grad_static(self.x_star.col(i))
                    .iter()
                    .zip(&self.phi_star)
                    .map(|(gp, phi)| (gp - phi * ai).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Rows `agent,coordinate,x_star`, then one `phi_star,p,value` row per
    /// coordinate.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["agent", "coordinate", "x_star"])?;
        for i in 0..self.x_star.n() {
            for p in 0..self.x_star.d() {
                w.write_record([i.to_string(), p.to_string(), self.x_star.get(p, i).to_string()])?;
            }
        }
        for (p, phi) in self.phi_star.iter().enumerate() {
            w.write_record(["phi_star".to_string(), p.to_string(), phi.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktOptions {
    pub tol: f64,
    /// Half-width of the first multiplier bracket, doubled until it holds
    /// the root.
    pub initial_bracket: f64,
}

impl Default for KktOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            initial_bracket: 1.0,
        }
    }
}

pub fn solve_kkt(problem: &AllocationProblem, tol: f64) -> Result<KktSolution> {
    solve_kkt_with(problem, KktOptions { tol, ..KktOptions::default() })
}

pub fn solve_kkt_with(problem: &AllocationProblem, options: KktOptions) -> Result<KktSolution> {
    if !(options.tol > 0.0) {
        return Err(Error::param(format!("oracle tolerance must be positive, got {}", options.tol)));
    }
    if !(options.initial_bracket > 0.0) {
        return Err(Error::param("initial bracket must be positive"));
    }
    if let Some(i) = problem.costs().iter().position(|c| !c.static_part.is_separable()) {
        return Err(Error::NotSeparable { agent: i });
    }
    let (d, n) = (problem.d(), problem.n());
    let a = problem.a();
    let mut x_star = StateMatrix::zeros(d, n);
    let mut phi_star = vec![0.0; d];
    let target_h = 0.1 * options.tol * (1.0 + problem.b_norm()) / (d as f64).sqrt();

    for p in 0..d {
        let bp = problem.b()[p];
        let allocate = |phi: f64, column: &mut Vec<f64>| -> Result<f64> {
            column.clear();
            let mut total = 0.0;
            for (cost, &ai) in problem.costs().iter().zip(a) {
                let xi = invert_gradient(&cost.static_part, p, phi * ai)?;
                column.push(xi);
                total += ai * xi;
            }
            Ok(total - bp)
        };
        let mut column = Vec::with_capacity(n);

        let mut lo = -options.initial_bracket;
        let mut hi = options.initial_bracket;
        let mut h_hi = allocate(hi, &mut column)?;
        let mut doublings = 0;
        while h_hi < 0.0 {
            if doublings >= MAX_DOUBLINGS {
                return Err(Error::UnboundedGradient { target: hi });
            }
            lo = hi;
            hi *= 2.0;
            h_hi = allocate(hi, &mut column)?;
            doublings += 1;
        }
        let mut h_lo = allocate(lo, &mut column)?;
        doublings = 0;
        while h_lo > 0.0 {
            if doublings >= MAX_DOUBLINGS {
                return Err(Error::UnboundedGradient { target: lo });
            }
            hi = lo;
            h_hi = h_lo;
            lo *= 2.0;
            h_lo = allocate(lo, &mut column)?;
            doublings += 1;
        }

        let mut best = if h_lo.abs() <= h_hi.abs() { (h_lo.abs(), lo) } else { (h_hi.abs(), hi) };
        loop {
            let mid = lo + 0.5 * (hi - lo);
            if mid <= lo || mid >= hi {
                break;
            }
            let h = allocate(mid, &mut column)?;
            if h.abs() < best.0 {
                best = (h.abs(), mid);
            }
            if h.abs() <= target_h && hi - lo <= options.tol * (1.0 + mid.abs()) {
                break;
            }
            if h < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let phi = best.1;
        allocate(phi, &mut column)?;
        phi_star[p] = phi;
        for (i, xi) in column.iter().enumerate() {
            x_star.col_mut(i)[p] = *xi;
        }
    }

    let residual = x_star
        .weighted_sum(a)
        .iter()
        .zip(problem.b())
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt();
    Ok(KktSolution { x_star, phi_star, residual })
}

/// `F*(t_k) = Σ f̃_i(x*_i) + Σ f̂_i(t_k)`: the time part moves the optimal
/// value but not the optimizer.
pub fn optimal_value_trace(problem: &AllocationProblem, solution: &KktSolution, times: &[f64]) -> Vec<f64> {
    let base = solution.static_value(problem);
    times.iter().map(|&t| base + problem.time_value(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{make_f2_costs, penalize, CoupledQuadCost, F2Ranges, LocalCost, Sinusoid};

    fn quad(gamma: f64, beta: f64) -> StaticCost {
        LocalCost::quadratic(gamma, beta, 0.0).unwrap().static_part
    }

    #[test]
    fn invert_quadratic() {
        assert!((invert_gradient(&quad(1.0, 0.0), 0, 6.0).unwrap() - 3.0).abs() < 1e-12);
        assert!(invert_gradient(&quad(2.0, 1.0), 0, 1.0).unwrap().abs() < 1e-12);
        // needs many bracket doublings
        let x = invert_gradient(&quad(1e-6, 0.0), 0, 1e3).unwrap();
        assert!((x - 5e8).abs() / 5e8 < 1e-10);
    }

    #[test]
    fn invert_lse_is_self_consistent() {
        let costs = make_f2_costs(30, 4, F2Ranges::default(), 9).unwrap();
        for (k, c) in costs.iter().enumerate() {
            let p = k % 4;
            let target = (k as f64 - 15.0) * 0.7;
            let x = invert_gradient(&c.static_part, p, target).unwrap();
            assert!((c.static_part.partial(p, x) - target).abs() <= 1e-10);
        }
    }

    #[test]
    fn invert_penalized_cost() {
        let base = LocalCost::quadratic(0.05, 20.0, 0.0).unwrap();
        let pen = penalize(base, vec![-50.0], vec![150.0], 10.0, 20.0).unwrap();
        for target in [0.0, 25.0, 35.0, 45.0] {
            let x = invert_gradient(&pen.static_part, 0, target).unwrap();
            assert!((pen.static_part.partial(0, x) - target).abs() <= 1e-12 * (1.0 + target));
        }
    }

    #[test]
    fn unbounded_gradient_is_an_error() {
        // gradient bounded above by 1: no x reaches 5
        let c = StaticCost::LogSumExpQuad(crate::costs::LogSumExpQuadCost {
            terms: vec![crate::costs::LseTerm { a: 0.0, b: 1.0, c: 0.0, d: 0.0 }],
        });
        assert!(matches!(invert_gradient(&c, 0, 5.0), Err(Error::UnboundedGradient { .. })));
    }

    fn analytic_quadratic(gammas: &[f64], b: f64) -> (f64, Vec<f64>) {
        // ∇ = 2 γ x = φ  =>  x = φ / (2γ),  Σ x = b
        let phi = b / gammas.iter().map(|g| 1.0 / (2.0 * g)).sum::<f64>();
        (phi, gammas.iter().map(|g| phi / (2.0 * g)).collect())
    }

    #[test]
    fn kkt_two_and_three_agents() {
        for (gammas, b) in [(vec![1.0, 1.0], 4.0), (vec![1.0, 2.0, 4.0], 7.0)] {
            let (phi, xs) = analytic_quadratic(&gammas, b);
            let costs = gammas.iter().map(|&g| LocalCost::quadratic(g, 0.0, 0.0).unwrap()).collect::<Vec<_>>();
            let n = costs.len();
            let problem = AllocationProblem::new(costs, vec![1.0; n], vec![b]).unwrap();
            let sol = solve_kkt(&problem, 1e-12).unwrap();
            assert!((sol.phi_star[0] - phi).abs() < 1e-10);
            for (i, x) in xs.iter().enumerate() {
                assert!((sol.x_star.get(0, i) - x).abs() < 1e-10);
            }
        }
        let (phi, xs) = analytic_quadratic(&[1.0, 2.0, 4.0], 7.0);
        assert_eq!(phi, 8.0);
        assert_eq!(xs, vec![4.0, 2.0, 1.0]);
    }

    #[test]
    fn kkt_invariants_on_lse_costs() {
        let costs = make_f2_costs(40, 4, F2Ranges::default(), 4).unwrap();
        let a: Vec<f64> = (0..40).map(|i| 0.1 + 0.9 * (i as f64) / 39.0).collect();
        let problem = AllocationProblem::new(costs, a, vec![10.0; 4]).unwrap();
        let sol = solve_kkt(&problem, 1e-10).unwrap();
        assert!(sol.stationarity_error(&problem) <= 1e-10);
        assert!(sol.residual <= 1e-10 * (1.0 + problem.b_norm()));
    }

    #[test]
    fn rejects_coupled_costs_and_bad_tolerance() {
        let coupled = LocalCost::new(StaticCost::Coupled(
            CoupledQuadCost::new(vec![2.0, 0.5, 0.5, 1.0], vec![0.0, 0.0]).unwrap(),
        ));
        let sep = LocalCost::new(StaticCost::Coupled(
            CoupledQuadCost::new(vec![2.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap(),
        ));
        let problem = AllocationProblem::new(vec![sep.clone(), coupled], vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(solve_kkt(&problem, 1e-10), Err(Error::NotSeparable { agent: 1 })));
        let problem = AllocationProblem::new(vec![sep.clone(), sep], vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!(solve_kkt(&problem, 1e-10).is_ok());
        assert!(solve_kkt(&problem, 0.0).is_err());
    }

    #[test]
    fn trace_follows_time_parts() {
        let costs = vec![
            LocalCost::quadratic(1.0, 0.0, 0.0).unwrap(),
            LocalCost::quadratic(1.0, 0.0, 0.0)
                .unwrap()
                .with_time_part(vec![Sinusoid { amplitude: 0.5, frequency: 2.0, phase: 0.0 }]),
        ];
        let problem = AllocationProblem::new(costs, vec![1.0, 1.0], vec![4.0]).unwrap();
        let sol = solve_kkt(&problem, 1e-12).unwrap();
        let times = [0.0, 0.3, 1.1];
        let trace = optimal_value_trace(&problem, &sol, &times);
        for (t, v) in times.iter().zip(trace) {
            assert!((v - (8.0 + 0.5 * (2.0 * t).sin())).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_layout() {
        let costs = vec![LocalCost::quadratic(1.0, 0.0, 0.0).unwrap(); 2];
        let problem = AllocationProblem::new(costs, vec![1.0, 1.0], vec![4.0]).unwrap();
        let sol = solve_kkt(&problem, 1e-12).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "agent,coordinate,x_star");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("phi_star,0,"));
    }
}
