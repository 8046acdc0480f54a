//! Local costs `f_i(x, t) = f̃_i(x) + f̂_i(t)`.
//!
//! Only the static part `f̃_i` enters the dynamics, through its gradient.
//! The time part shifts the value of the objective and never its minimizer.
//! Every shipped static part except [`StaticCost::Coupled`] is a sum of
//! per-coordinate terms, which is what the centralized oracle relies on.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `log(1 + exp(u))` without overflow.
pub fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// Logistic function `1 / (1 + exp(-u))`, stable for large `|u|`.
pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Scalar `gamma x² + beta x + alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticCost {
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
}

impl QuadraticCost {
    pub fn new(gamma: f64, beta: f64, alpha: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::param(format!("quadratic coefficient must be positive, got {gamma}")));
        }
        Ok(Self { gamma, beta, alpha })
    }
}

/// One coordinate of the log-sum-exp-plus-quadratic cost:
/// `a (x - c)² + log(1 + exp(b (x - d)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LseTerm {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl LseTerm {
    fn value(&self, x: f64) -> f64 {
        self.a * (x - self.c).powi(2) + softplus(self.b * (x - self.d))
    }

    fn derivative(&self, x: f64) -> f64 {
        2.0 * self.a * (x - self.c) + self.b * logistic(self.b * (x - self.d))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogSumExpQuadCost {
    pub terms: Vec<LseTerm>,
}

impl LogSumExpQuadCost {
    pub fn new(terms: Vec<LseTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::param("log-sum-exp cost needs at least one coordinate"));
        }
        if let Some(t) = terms.iter().find(|t| !(t.a > 0.0)) {
            return Err(Error::param(format!("quadratic weight must be positive, got {}", t.a)));
        }
        Ok(Self { terms })
    }
}

/// `½ xᵀ Q x + cᵀ x` with a dense symmetric positive definite `Q`.
/// Not coordinate-separable unless `Q` is diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledQuadCost {
    pub q: Vec<f64>,
    pub c: Vec<f64>,
}

impl CoupledQuadCost {
    pub fn new(q: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let d = c.len();
        if q.len() != d * d || d == 0 {
            return Err(Error::dim(format!("Q has {} entries for d = {d}", q.len())));
        }
        for i in 0..d {
            for j in 0..d {
                if q[i * d + j] != q[j * d + i] {
                    return Err(Error::param("Q must be symmetric"));
                }
            }
        }
        // Cholesky as a positive-definiteness probe.
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
                if i == j {
                    let v = q[i * d + i] - s;
                    if !(v > 0.0) {
                        return Err(Error::param("Q must be positive definite"));
                    }
                    l[i * d + i] = v.sqrt();
                } else {
                    l[i * d + j] = (q[i * d + j] - s) / l[j * d + j];
                }
            }
        }
        Ok(Self { q, c })
    }

    fn is_diagonal(&self) -> bool {
        let d = self.c.len();
        (0..d).all(|i| (0..d).all(|j| i == j || self.q[i * d + j] == 0.0))
    }
}

/// Smooth one-sided barriers `eps/mu · log(1 + exp(mu u))` on both box faces.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedCost {
    pub base: Box<StaticCost>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub eps: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StaticCost {
    Quadratic(QuadraticCost),
    LogSumExpQuad(LogSumExpQuadCost),
    Coupled(CoupledQuadCost),
    Penalized(PenalizedCost),
}

impl StaticCost {
    pub fn dim(&self) -> usize {
        match self {
            StaticCost::Quadratic(_) => 1,
            StaticCost::LogSumExpQuad(c) => c.terms.len(),
            StaticCost::Coupled(c) => c.c.len(),
            StaticCost::Penalized(p) => p.base.dim(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            StaticCost::Quadratic(q) => q.gamma * x[0] * x[0] + q.beta * x[0] + q.alpha,
            StaticCost::LogSumExpQuad(c) => c.terms.iter().zip(x).map(|(t, &xp)| t.value(xp)).sum(),
            StaticCost::Coupled(c) => {
                let d = c.c.len();
                let mut v = 0.0;
                for i in 0..d {
                    let qx: f64 = (0..d).map(|j| c.q[i * d + j] * x[j]).sum();
                    v += 0.5 * x[i] * qx + c.c[i] * x[i];
                }
                v
            }
            StaticCost::Penalized(p) => {
                let barrier: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(k, &xp)| {
                        softplus(p.mu * (xp - p.upper[k])) + softplus(p.mu * (p.lower[k] - xp))
                    })
                    .sum();
                p.base.value(x) + p.eps / p.mu * barrier
            }
        }
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            StaticCost::Quadratic(q) => out[0] = 2.0 * q.gamma * x[0] + q.beta,
            StaticCost::LogSumExpQuad(c) => {
                for ((o, t), &xp) in out.iter_mut().zip(&c.terms).zip(x) {
                    *o = t.derivative(xp);
                }
            }
            StaticCost::Coupled(c) => {
                let d = c.c.len();
                for (i, o) in out.iter_mut().enumerate().take(d) {
                    *o = (0..d).map(|j| c.q[i * d + j] * x[j]).sum::<f64>() + c.c[i];
                }
            }
            StaticCost::Penalized(p) => {
                p.base.gradient_into(x, out);
                for (k, o) in out.iter_mut().enumerate() {
                    *o += p.eps * logistic(p.mu * (x[k] - p.upper[k]))
                        - p.eps * logistic(p.mu * (p.lower[k] - x[k]));
                }
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(x, &mut out);
        out
    }

    /// True when the cost is a sum of one-dimensional terms, so coordinate
    /// `p` of the gradient depends on `x_p` only.
    pub fn is_separable(&self) -> bool {
        match self {
            StaticCost::Quadratic(_) | StaticCost::LogSumExpQuad(_) => true,
            StaticCost::Coupled(c) => c.is_diagonal(),
            StaticCost::Penalized(p) => p.base.is_separable(),
        }
    }

    /// `∂f̃/∂x_p` evaluated at a scalar, for separable costs.
    pub fn partial(&self, p: usize, xp: f64) -> f64 {
        match self {
            StaticCost::Quadratic(q) => 2.0 * q.gamma * xp + q.beta,
            StaticCost::LogSumExpQuad(c) => c.terms[p].derivative(xp),
            StaticCost::Coupled(c) => {
                let d = c.c.len();
                c.q[p * d + p] * xp + c.c[p]
            }
            StaticCost::Penalized(pc) => {
                pc.base.partial(p, xp) + pc.eps * logistic(pc.mu * (xp - pc.upper[p]))
                    - pc.eps * logistic(pc.mu * (pc.lower[p] - xp))
            }
        }
    }
}

/// `amplitude · sin(frequency · t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalCost {
    pub static_part: StaticCost,
    pub time_part: Vec<Sinusoid>,
}

impl LocalCost {
    pub fn new(static_part: StaticCost) -> Self {
        Self {
            static_part,
            time_part: Vec::new(),
        }
    }

    pub fn with_time_part(mut self, time_part: Vec<Sinusoid>) -> Self {
        self.time_part = time_part;
        self
    }

    pub fn quadratic(gamma: f64, beta: f64, alpha: f64) -> Result<Self> {
        Ok(Self::new(StaticCost::Quadratic(QuadraticCost::new(gamma, beta, alpha)?)))
    }

    pub fn dim(&self) -> usize {
        self.static_part.dim()
    }

    pub fn static_value(&self, x: &[f64]) -> f64 {
        self.static_part.value(x)
    }

    pub fn time_value(&self, t: f64) -> f64 {
        self.time_part
            .iter()
            .map(|s| s.amplitude * (s.frequency * t + s.phase).sin())
            .sum()
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        self.static_value(x) + self.time_value(t)
    }

    pub fn grad_static(&self, x: &[f64]) -> Vec<f64> {
        self.static_part.gradient(x)
    }
}

/// `Σ_i f_i(x_i, t)` for a column-major `d x n` state.
pub fn eval_total(costs: &[LocalCost], x: &[f64], d: usize, t: f64) -> Result<f64> {
    if x.len() != d * costs.len() {
        return Err(Error::dim(format!(
            "state has {} entries, expected {} agents x {d}",
            x.len(),
            costs.len()
        )));
    }
    if let Some(c) = costs.iter().find(|c| c.dim() != d) {
        return Err(Error::dim(format!("cost of dimension {} in a problem with d = {d}", c.dim())));
    }
    Ok(costs
        .iter()
        .zip(x.chunks_exact(d))
        .map(|(c, xi)| c.value(xi, t))
        .sum())
}

/// Adds smooth barriers for the box `lower <= x <= upper` to the static part.
pub fn penalize(base: LocalCost, lower: Vec<f64>, upper: Vec<f64>, eps: f64, mu: f64) -> Result<LocalCost> {
    let d = base.dim();
    if lower.len() != d || upper.len() != d {
        return Err(Error::dim(format!("box bounds must have dimension {d}")));
    }
    if let Some(k) = (0..d).find(|&k| !(lower[k] < upper[k])) {
        return Err(Error::param(format!(
            "lower bound {} is not below upper bound {} in coordinate {k}",
            lower[k], upper[k]
        )));
    }
    if !(eps > 0.0) || !(mu > 0.0) {
        return Err(Error::param(format!("penalty weight {eps} and sharpness {mu} must be positive")));
    }
    Ok(LocalCost {
        static_part: StaticCost::Penalized(PenalizedCost {
            base: Box::new(base.static_part),
            lower,
            upper,
            eps,
            mu,
        }),
        time_part: base.time_part,
    })
}

/// Parameter ranges for the random log-sum-exp costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F2Ranges {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub c: (f64, f64),
    pub d: (f64, f64),
    pub amplitude: (f64, f64),
    pub frequency: (f64, f64),
    pub phase: (f64, f64),
}

impl Default for F2Ranges {
    fn default() -> Self {
        Self {
            a: (0.5, 2.0),
            b: (-1.0, 1.0),
            c: (-2.0, 2.0),
            d: (-2.0, 2.0),
            amplitude: (0.0, 1.0),
            frequency: (0.1, 2.0),
            phase: (0.0, TAU),
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// `n` random log-sum-exp-plus-quadratic costs of dimension `d` with
/// sinusoidal time parts.
pub fn make_f2_costs(n: usize, d: usize, ranges: F2Ranges, seed: u64) -> Result<Vec<LocalCost>> {
    if !(ranges.a.0 > 0.0) || ranges.a.1 < ranges.a.0 {
        return Err(Error::param("quadratic weight range must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut terms = Vec::with_capacity(d);
            let mut time_part = Vec::with_capacity(d);
            for _ in 0..d {
                terms.push(LseTerm {
                    a: uniform(&mut rng, ranges.a),
                    b: uniform(&mut rng, ranges.b),
                    c: uniform(&mut rng, ranges.c),
                    d: uniform(&mut rng, ranges.d),
                });
                time_part.push(Sinusoid {
                    amplitude: uniform(&mut rng, ranges.amplitude),
                    frequency: uniform(&mut rng, ranges.frequency),
                    phase: uniform(&mut rng, ranges.phase),
                });
            }
            Ok(LocalCost::new(StaticCost::LogSumExpQuad(LogSumExpQuadCost::new(terms)?))
                .with_time_part(time_part))
        })
        .collect()
}

/// Ranges for the random generator cost curves `γ x² + β x + α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorRanges {
    pub gamma: (f64, f64),
    pub beta: (f64, f64),
    pub alpha: (f64, f64),
}

impl Default for GeneratorRanges {
    fn default() -> Self {
        Self {
            gamma: (0.02, 0.10),
            beta: (15.0, 40.0),
            alpha: (0.0, 100.0),
        }
    }
}

pub fn make_generator_costs(n: usize, ranges: GeneratorRanges, seed: u64) -> Result<Vec<LocalCost>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let gamma = uniform(&mut rng, ranges.gamma);
            let beta = uniform(&mut rng, ranges.beta);
            let alpha = uniform(&mut rng, ranges.alpha);
            LocalCost::quadratic(gamma, beta, alpha)
        })
        .collect()
}
