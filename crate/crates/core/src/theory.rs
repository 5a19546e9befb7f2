//! Closed-form calculators for the critical parameters (stepsize, batch
//! size, speedup and learning-rate curves), convergence-bound predictors,
//! staleness-drift bounds, and numerical verifiers for the sparsity-variance
//! inequalities.
//!
//! All asymptotic constants are set to 1 and log factors are dropped; the
//! bound calculators are order-of-magnitude predictors, not certified
//! iteration counts.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::oracles::Oracle;
use crate::problems::Problem;

/// Critical parallelism parameters for a problem/noise configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalParams {
    /// Largest certified per-gradient stepsize, `1 / (10 L (M + tau))`.
    pub gamma_crit: f64,
    /// Critical batch size `sigma_star^2 / eps + M + 1`.
    pub b_crit: f64,
    /// Critical delay; same expression as `b_crit`.
    pub tau_crit: f64,
}

impl CriticalParams {
    pub fn compute(l: f64, m: f64, tau: f64, sigma_star2: f64, eps: f64) -> Result<Self> {
        let gamma_crit = critical_stepsize(l, m, tau)?;
        let b_crit = critical_batch_size(sigma_star2, eps, m)?;
        Ok(Self { gamma_crit, b_crit, tau_crit: b_crit })
    }
}

/// `gamma_crit = 1 / (10 L (M + tau))`.
pub fn critical_stepsize(l: f64, m: f64, tau: f64) -> Result<f64> {
    if !l.is_finite() || l <= 0.0 {
        return Err(Error::invalid("L", format!("must be > 0, got {l}")));
    }
    if m < 0.0 || tau < 1.0 {
        return Err(Error::invalid("M/tau", "need M >= 0 and tau >= 1"));
    }
    Ok(1.0 / (10.0 * l * (m + tau)))
}

/// `b_crit = sigma_star^2 / eps + M + 1`.
pub fn critical_batch_size(sigma_star2: f64, eps: f64, m: f64) -> Result<f64> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::invalid("eps", format!("must be > 0, got {eps}")));
    }
    if sigma_star2 < 0.0 || m < 0.0 {
        return Err(Error::invalid("sigma_star2/M", "must be >= 0"));
    }
    Ok(sigma_star2 / eps + m + 1.0)
}

/// Predicted parallel speedup over one worker,
/// `b (sigma_star^2/eps + M + 1) / (sigma_star^2/eps + M + b)`.
pub fn predicted_speedup(b: f64, m: f64, sigma_star2: f64, eps: f64) -> f64 {
    let s = sigma_star2 / eps + m;
    b * (s + 1.0) / (s + b)
}

/// Predicted parallel running time normalized by the single-worker time;
/// the exact reciprocal of [`predicted_speedup`].
pub fn predicted_normalized_time(b: f64, m: f64, sigma_star2: f64, eps: f64) -> f64 {
    1.0 / predicted_speedup(b, m, sigma_star2, eps)
}

/// Predicted optimal averaged-batch learning rate, `b / (10 L (M + b))`:
/// linear in `b` below `M`, plateauing at `1/(10 L)` above.
pub fn predicted_minibatch_lr(b: f64, l: f64, m: f64) -> f64 {
    b / (10.0 * l * (m + b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvexitySetting {
    NonConvex,
    Convex,
    StronglyConvex,
}

/// Inputs to the iteration-bound predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub setting: ConvexitySetting,
    pub l: f64,
    pub mu: f64,
    pub m: f64,
    pub tau: f64,
    pub sigma2: f64,
    pub eps: f64,
    /// `F_0 = f(x_0) - f_star` for the non-convex setting, `R_0^2` for the
    /// convex setting; unused for strongly convex.
    pub f0_or_r02: f64,
}

/// Order-of-magnitude iteration count to reach an `eps`-approximate solution
/// (constants set to 1, log factors dropped).
pub fn theorem1_iteration_bound(inputs: &BoundInputs) -> Result<f64> {
    let BoundInputs { setting, l, mu, m, tau, sigma2, eps, f0_or_r02 } = *inputs;
    if !l.is_finite() || l <= 0.0 || !eps.is_finite() || eps <= 0.0 || m < 0.0 || tau < 1.0 || sigma2 < 0.0 {
        return Err(Error::invalid("bound inputs", "need L > 0, eps > 0, M >= 0, tau >= 1, sigma2 >= 0"));
    }
    match setting {
        ConvexitySetting::NonConvex => {
            Ok((sigma2 / (eps * eps) + (m + tau) / eps) * l * f0_or_r02)
        }
        ConvexitySetting::Convex => {
            Ok((sigma2 / (eps * eps) + l * (m + tau) / eps) * f0_or_r02)
        }
        ConvexitySetting::StronglyConvex => {
            if !mu.is_finite() || mu <= 0.0 {
                return Err(Error::invalid("mu", "must be > 0 for the strongly convex setting"));
            }
            Ok(sigma2 / (mu * eps) + l * (m + tau) / mu)
        }
    }
}

/// Staleness-drift bound evaluated on a window of squared gradient norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtBound {
    /// General form `2 gamma^2 (tau + M) sum + 2 gamma^2 tau sigma^2`, valid
    /// for any stepsize.
    pub general: f64,
    /// Simplified form, present only when `gamma <= gamma_crit`.
    pub simplified: Option<f64>,
}

fn window_sum(history: &[f64], tau: u64) -> Result<f64> {
    if history.len() as u64 > tau {
        return Err(Error::invalid(
            "grad_norm_history",
            format!("window of {} entries exceeds tau = {tau}", history.len()),
        ));
    }
    Ok(history.iter().sum())
}

/// Drift bound for the bounded-parallelism template: general form plus the
/// simplified `(1/(50 L^2 tau)) sum + gamma sigma^2 / (5 L)` when the
/// stepsize is below critical.
pub fn rt_bound_smj(
    grad_norm_history: &[f64],
    l: f64,
    m: f64,
    tau: u64,
    gamma: f64,
    sigma2: f64,
) -> Result<RtBound> {
    let sum = window_sum(grad_norm_history, tau)?;
    let t = tau as f64;
    let general = 2.0 * gamma * gamma * (t + m) * sum + 2.0 * gamma * gamma * t * sigma2;
    let gamma_crit = critical_stepsize(l, m, t)?;
    let simplified = if gamma <= gamma_crit {
        Some(sum / (50.0 * l * l * t) + gamma * sigma2 / (5.0 * l))
    } else {
        None
    };
    Ok(RtBound { general, simplified })
}

/// Drift bound for exactly-delayed SGD,
/// `(1/(30 L^2 tau)) sum + (2/(3 L)) gamma sigma^2`.
pub fn rt_bound_sk(
    grad_norm_history: &[f64],
    l: f64,
    tau: u64,
    gamma: f64,
    sigma2: f64,
) -> Result<f64> {
    let sum = window_sum(grad_norm_history, tau)?;
    let t = tau as f64;
    Ok(sum / (30.0 * l * l * t) + 2.0 / (3.0 * l) * gamma * sigma2)
}

/// Variance floor `(1 - Delta) / Delta` forced by `Delta`-sparse unbiased
/// gradients.
pub fn sparsity_variance_floor(delta: f64) -> Result<f64> {
    if !delta.is_finite() || delta <= 0.0 || delta > 1.0 {
        return Err(Error::invalid("delta", format!("must be in (0, 1], got {delta}")));
    }
    Ok((1.0 - delta) / delta)
}

/// A finite discrete distribution over reals, as (value, probability) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDistribution {
    pub atoms: Vec<(f64, f64)>,
}

impl FiniteDistribution {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("atoms", "must be nonempty"));
        }
        let total: f64 = atoms.iter().map(|(_, p)| p).sum();
        if atoms.iter().any(|(v, p)| !v.is_finite() || !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("atoms", "values and probabilities must be finite, p >= 0"));
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("atoms", format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { atoms })
    }

    pub fn pr_nonzero(&self) -> f64 {
        self.atoms.iter().filter(|(v, _)| *v != 0.0).map(|(_, p)| p).sum()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|(v, p)| v * p).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.atoms.iter().map(|(v, p)| v * v * p).sum()
    }
}

/// Verdict of one sparsity-inequality check `|E X|^2 <= Delta E X^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaTrickReport {
    pub precondition_ok: bool,
    pub pr_nonzero: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Evaluates `|E X|^2 <= Delta E X^2` exactly over the finite support.
/// A declared `Delta` below the actual nonzero probability is reported as a
/// precondition violation, not an error.
pub fn verify_lemma_trick(dist: &FiniteDistribution, delta_declared: f64) -> LemmaTrickReport {
    let pr_nonzero = dist.pr_nonzero();
    let precondition_ok = pr_nonzero <= delta_declared + 1e-12;
    let mean = dist.mean();
    let lhs = mean * mean;
    let rhs = delta_declared * dist.second_moment();
    let slack = rhs - lhs;
    // Exact arithmetic gives lhs <= rhs whenever the precondition holds; the
    // epsilon absorbs f64 rounding only.
    let tol = 1e-12 * rhs.abs().max(lhs.abs()).max(1e-300);
    let holds = lhs <= rhs + tol;
    LemmaTrickReport { precondition_ok, pr_nonzero, lhs, rhs, slack, holds }
}

/// Draws a random finite distribution compliant with a random sparsity level
/// `Delta`: a few nonzero atoms whose total probability stays below the
/// declared `Delta`, the rest of the mass on zero. Returns the distribution
/// and its declared `Delta`. Used by the verification suites.
pub fn random_compliant_distribution(rng: &mut ChaCha8Rng) -> (FiniteDistribution, f64) {
    use rand::Rng;
    let support = rng.random_range(1..=6usize);
    let delta: f64 = rng.random_range(0.01..1.0f64);
    let mut remaining = delta * rng.random_range(0.2..1.0);
    let mut atoms = Vec::new();
    for _ in 0..support {
        let p = remaining * rng.random_range(0.1..0.9);
        let v = rng.random_range(-10.0..10.0f64);
        if v != 0.0 && p > 0.0 {
            atoms.push((v, p));
            remaining -= p;
        }
    }
    atoms.push((0.0, 1.0 - atoms.iter().map(|(_, p)| p).sum::<f64>()));
    (FiniteDistribution::new(atoms).expect("generated atoms are a distribution"), delta)
}

/// Empirical batch-size bound `B_S(x) = 1 + E ||g - grad f||^2 / ||grad f||^2`.
/// Returns infinity at stationary points, where the ratio is undefined.
pub fn batch_size_bound(
    problem: &Problem,
    oracle: &Oracle,
    x: &[f64],
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if samples < 1 {
        return Err(Error::invalid("samples", "must be >= 1"));
    }
    let grad = problem.gradient(x)?;
    let grad_norm2: f64 = grad.iter().map(|v| v * v).sum();
    if grad_norm2 == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mut mean_sq = 0.0;
    for _ in 0..samples {
        let g = oracle.sample(problem, x, rng)?;
        mean_sq += g
            .values
            .iter()
            .zip(&grad)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    mean_sq /= samples as f64;
    Ok(1.0 + mean_sq / grad_norm2)
}
