//! Odd, sign-preserving actuation maps `g` applied to gradient disagreements.
//!
//! `power_sign` acts on the whole vector through its Euclidean norm; the
//! quantizers, robust maps and saturation act elementwise. `sign(0) = 0`
//! and all rounding is half-to-even.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Actuation {
    Identity,
    PowerSign { mu: f64 },
    FixedTime { mu1: f64, mu2: f64 },
    UniformQuantizer { delta: f64 },
    LogQuantizer { delta: f64 },
    RobustUniform { eps: f64, threshold: f64 },
    RobustLaplace { eps: f64 },
    Saturation { kappa: f64 },
    Compose { outer: Box<Actuation>, inner: Box<Actuation> },
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be positive, got {v}")))
    }
}

fn unit_open(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must lie in (0, 1), got {v}")))
    }
}

impl Actuation {
    pub fn power_sign(mu: f64) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::param(format!("power-sign exponent must be >= 0, got {mu}")));
        }
        Ok(Actuation::PowerSign { mu })
    }

    pub fn fixed_time(mu1: f64, mu2: f64) -> Result<Self> {
        unit_open("mu1", mu1)?;
        positive("mu2", mu2)?;
        Ok(Actuation::FixedTime { mu1, mu2 })
    }

    pub fn uniform_quantizer(delta: f64) -> Result<Self> {
        positive("quantization level", delta)?;
        Ok(Actuation::UniformQuantizer { delta })
    }

    pub fn log_quantizer(delta: f64) -> Result<Self> {
        positive("quantization level", delta)?;
        Ok(Actuation::LogQuantizer { delta })
    }

    pub fn robust_uniform(eps: f64, threshold: f64) -> Result<Self> {
        unit_open("eps", eps)?;
        positive("dead-zone threshold", threshold)?;
        Ok(Actuation::RobustUniform { eps, threshold })
    }

    pub fn robust_laplace(eps: f64) -> Result<Self> {
        unit_open("eps", eps)?;
        Ok(Actuation::RobustLaplace { eps })
    }

    pub fn saturation(kappa: f64) -> Result<Self> {
        positive("saturation level", kappa)?;
        Ok(Actuation::Saturation { kappa })
    }

    /// `z ↦ outer(inner(z))`.
    pub fn compose(outer: Actuation, inner: Actuation) -> Self {
        Actuation::Compose {
            outer: Box::new(outer),
            inner: Box::new(inner),
        }
    }

    pub fn apply_into(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), out.len());
        match *self {
            Actuation::Identity => out.copy_from_slice(z),
            Actuation::PowerSign { mu } => power_sign_into(z, mu, out),
            Actuation::FixedTime { mu1, mu2 } => {
                let norm = euclidean(z);
                if norm == 0.0 {
                    out.fill(0.0);
                } else {
                    let f = norm.powf(mu1 - 1.0) + norm.powf(mu2 - 1.0);
                    for (o, &v) in out.iter_mut().zip(z) {
                        *o = v * f;
                    }
                }
            }
            Actuation::UniformQuantizer { delta } => {
                for (o, &v) in out.iter_mut().zip(z) {
                    *o = uniform_quantize(v, delta);
                }
            }
            Actuation::LogQuantizer { delta } => {
                for (o, &v) in out.iter_mut().zip(z) {
                    *o = if v == 0.0 {
                        0.0
                    } else {
                        sign(v) * uniform_quantize(v.abs().ln(), delta).exp()
                    };
                }
            }
            Actuation::RobustUniform { eps, threshold } => {
                let level = (1.0 - eps) / (eps * threshold);
                for (o, &v) in out.iter_mut().zip(z) {
                    *o = if v.abs() > threshold { level * sign(v) } else { 0.0 };
                }
            }
            Actuation::RobustLaplace { eps } => {
                for (o, &v) in out.iter_mut().zip(z) {
                    *o = 2.0 * eps * sign(v);
                }
            }
            Actuation::Saturation { kappa } => {
                for (o, &v) in out.iter_mut().zip(z) {
                    *o = v.clamp(-kappa, kappa);
                }
            }
            Actuation::Compose { ref outer, ref inner } => {
                let mut tmp = vec![0.0; z.len()];
                inner.apply_into(z, &mut tmp);
                outer.apply_into(&tmp, out);
            }
        }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; z.len()];
        self.apply_into(z, &mut out);
        out
    }

    /// Jumps somewhere (sign, quantizers, dead zone). Exact consensus may be
    /// unreachable under a fixed-step discretization of these.
    pub fn is_discontinuous(&self) -> bool {
        match self {
            Actuation::Identity | Actuation::Saturation { .. } | Actuation::FixedTime { .. } => false,
            Actuation::PowerSign { mu } => *mu == 0.0,
            Actuation::UniformQuantizer { .. }
            | Actuation::LogQuantizer { .. }
            | Actuation::RobustUniform { .. }
            | Actuation::RobustLaplace { .. } => true,
            Actuation::Compose { outer, inner } => outer.is_discontinuous() || inner.is_discontinuous(),
        }
    }

    /// `sup |g(z)|_∞` when the map is bounded.
    pub fn bound(&self) -> Option<f64> {
        match self {
            Actuation::Saturation { kappa } => Some(*kappa),
            Actuation::RobustLaplace { eps } => Some(2.0 * eps),
            Actuation::RobustUniform { eps, threshold } => Some((1.0 - eps) / (eps * threshold)),
            Actuation::PowerSign { mu } if *mu == 0.0 => Some(1.0),
            Actuation::Compose { outer, inner } => match (outer.bound(), inner.bound()) {
                (Some(b), _) => Some(b),
                (None, Some(b)) => outer.monotone_image_bound(b),
                _ => None,
            },
            _ => None,
        }
    }

    // Bound of `sup |self(z)|` over `|z|_∞ <= b` for elementwise monotone maps.
    fn monotone_image_bound(&self, b: f64) -> Option<f64> {
        match self {
            Actuation::Identity => Some(b),
            Actuation::UniformQuantizer { .. } | Actuation::LogQuantizer { .. } => {
                Some(self.apply(&[b])[0].abs())
            }
            _ => self.bound(),
        }
    }
}

fn euclidean(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn power_sign_into(z: &[f64], mu: f64, out: &mut [f64]) {
    let norm = euclidean(z);
    if norm == 0.0 {
        out.fill(0.0);
        return;
    }
    let f = norm.powf(mu - 1.0);
    for (o, &v) in out.iter_mut().zip(z) {
        *o = v * f;
    }
}

fn uniform_quantize(v: f64, delta: f64) -> f64 {
    delta * (v / delta).round_ties_even()
}

/// `z ‖z‖^(μ-1)`, zero at the origin.
pub fn power_sign(z: &[f64], mu: f64) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    power_sign_into(z, mu, &mut out);
    out
}

/// Anything usable as `g`: the shipped [`Actuation`] catalog or a test double.
pub trait SignMap {
    fn map_into(&self, z: &[f64], out: &mut [f64]);
}

impl SignMap for Actuation {
    fn map_into(&self, z: &[f64], out: &mut [f64]) {
        self.apply_into(z, out);
    }
}

impl<F: Fn(&[f64], &mut [f64])> SignMap for F {
    fn map_into(&self, z: &[f64], out: &mut [f64]) {
        self(z, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignReport {
    /// `g(-z) == -g(z)` exactly on every sample.
    pub odd_ok: bool,
    /// `sign(g(z)_p) * sign(z_p) >= 0` elementwise and `zᵀ g(z) >= 0`.
    pub sign_ok: bool,
    pub zero_ok: bool,
    /// No sampled nonzero coordinate was mapped to zero.
    pub strict: bool,
}

impl SignReport {
    pub fn passes(&self) -> bool {
        self.odd_ok && self.sign_ok && self.zero_ok
    }
}

/// Samples `n_samples` vectors with magnitudes spread over `[1e-3, 1e3]` and
/// checks oddness, sign preservation and `g(0) = 0`.
pub fn verify_sign_preserving<G: SignMap + ?Sized>(g: &G, dim: usize, n_samples: usize, seed: u64) -> SignReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SignReport {
        odd_ok: true,
        sign_ok: true,
        zero_ok: true,
        strict: true,
    };
    let zero = vec![0.0; dim];
    let mut out = vec![0.0; dim];
    g.map_into(&zero, &mut out);
    report.zero_ok = out.iter().all(|&v| v == 0.0);

    let mut neg_out = vec![0.0; dim];
    for _ in 0..n_samples.max(1) {
        let z: Vec<f64> = (0..dim)
            .map(|_| {
                let mag = 10f64.powf(rng.random_range(-3.0..3.0));
                if rng.random::<bool>() { mag } else { -mag }
            })
            .collect();
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        g.map_into(&z, &mut out);
        g.map_into(&neg, &mut neg_out);
        if out.iter().zip(&neg_out).any(|(a, b)| *a != -*b) {
            report.odd_ok = false;
        }
        let inner: f64 = z.iter().zip(&out).map(|(a, b)| a * b).sum();
        if z.iter().zip(&out).any(|(a, b)| sign(*a) * sign(*b) < 0.0) || inner < 0.0 {
            report.sign_ok = false;
        }
        if z.iter().zip(&out).any(|(a, b)| *a != 0.0 && *b == 0.0) {
            report.strict = false;
        }
    }
    report
}
