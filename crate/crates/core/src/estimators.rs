//! Empirical critical-batch-size estimation along an optimization
//! trajectory.
//!
//! The local estimate is `bhat(x) = 1 + E||g - grad f||^2 / (||grad f||^2 +
//! eps_hat)`, where `eps_hat` is the mean squared gradient norm over the last
//! ten recorded checkpoints of the run. The running maximum of `bhat` over
//! checkpoints estimates the critical batch size. Because the synthetic
//! problems expose their exact gradients, the noise second moment is measured
//! against ground truth rather than a held-out batch.

use rayon::prelude::*;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::{self, RunConfig};
use crate::oracles::Oracle;
use crate::problems::Problem;
use crate::seedstream;

/// Number of trailing checkpoints averaged into `eps_hat`.
pub const EPS_HAT_TAIL: usize = 10;

/// One checkpoint's estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BhatRecord {
    pub step: u64,
    /// Exact `||grad f(x)||^2` at the checkpoint.
    pub grad_norm2: f64,
    /// Empirical `E ||g - grad f||^2` at the checkpoint.
    pub noise_mean2: f64,
    pub bhat: f64,
}

/// Mean of the trailing squared gradient norms; requires exactly ten values.
pub fn estimate_epsilon_hat(grad_norm2_tail: &[f64]) -> Result<f64> {
    if grad_norm2_tail.len() != EPS_HAT_TAIL {
        return Err(Error::invalid(
            "grad_norm2_tail",
            format!("need exactly {EPS_HAT_TAIL} values, got {}", grad_norm2_tail.len()),
        ));
    }
    Ok(grad_norm2_tail.iter().sum::<f64>() / EPS_HAT_TAIL as f64)
}

/// Estimates `bhat(x)` from `samples` fresh oracle draws against the exact
/// gradient. With `eps_hat = 0` at a stationary point the ratio is
/// undefined and reported as infinity.
pub fn estimate_bhat(
    problem: &Problem,
    oracle: &Oracle,
    x: &[f64],
    step: u64,
    eps_hat: f64,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BhatRecord> {
    if samples < 2 {
        return Err(Error::invalid("samples", "must be >= 2"));
    }
    let grad = problem.gradient(x)?;
    let grad_norm2: f64 = grad.iter().map(|v| v * v).sum();
    let mut noise_mean2 = 0.0;
    for _ in 0..samples {
        let g = oracle.sample(problem, x, rng)?;
        noise_mean2 += g
            .values
            .iter()
            .zip(&grad)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    noise_mean2 /= samples as f64;
    let denom = grad_norm2 + eps_hat;
    let bhat = if denom == 0.0 {
        if noise_mean2 == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        1.0 + noise_mean2 / denom
    };
    Ok(BhatRecord { step, grad_norm2, noise_mean2, bhat })
}

/// The running estimate of the critical batch size: the maximal observed
/// `bhat` over the record set.
pub fn running_bhat_crit(records: &[BhatRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("records", "must be nonempty"));
    }
    Ok(records.iter().map(|r| r.bhat).fold(f64::NEG_INFINITY, f64::max))
}

/// Outcome of the sandwich check on a record set.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    /// Record indices where `bhat` exceeds
    /// `1 + sigma_star^2 / max(grad_norm2, eps_hat) + M` beyond tolerance.
    pub left_violations: Vec<usize>,
    /// Record indices where the middle term exceeds `4 sup bhat` beyond
    /// tolerance. The supremum over the record set stands in for the
    /// supremum over the whole space, which is an approximation.
    pub right_violations: Vec<usize>,
    pub sup_bhat: f64,
    pub holds: bool,
}

/// Verifies, per record, the sandwich
/// `bhat(x) <= 1 + sigma_star^2 / max(grad_norm2, eps_hat) + M <= 4 sup bhat`
/// with a relative Monte Carlo tolerance.
pub fn bhat_sandwich_check(
    records: &[BhatRecord],
    sigma_star2: f64,
    m: f64,
    eps_hat: f64,
    rel_tol: f64,
) -> Result<SandwichReport> {
    if records.is_empty() {
        return Err(Error::invalid("records", "must be nonempty"));
    }
    let sup_bhat = running_bhat_crit(records)?;
    let mut left_violations = Vec::new();
    let mut right_violations = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let scale = r.grad_norm2.max(eps_hat);
        let middle = if scale == 0.0 {
            if sigma_star2 == 0.0 {
                1.0 + m
            } else {
                f64::INFINITY
            }
        } else {
            1.0 + sigma_star2 / scale + m
        };
        if r.bhat > middle * (1.0 + rel_tol) {
            left_violations.push(i);
        }
        if middle > 4.0 * sup_bhat * (1.0 + rel_tol) {
            right_violations.push(i);
        }
    }
    let holds = left_violations.is_empty() && right_violations.is_empty();
    Ok(SandwichReport { left_violations, right_violations, sup_bhat, holds })
}

/// Controls for tracking `bhat` along a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOptions {
    /// Target number of checkpoints; the cadence is the converged update
    /// count divided by this.
    pub checkpoints: u64,
    /// Oracle draws per checkpoint for the noise second moment.
    pub samples: usize,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self { checkpoints: 100, samples: 10_000 }
    }
}

/// A tracked trajectory: per-checkpoint records, the tail estimate, and the
/// running maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct BhatTrack {
    pub records: Vec<BhatRecord>,
    pub eps_hat: f64,
    pub bhat_crit: f64,
    pub model_updates: u64,
    pub grad_evals: u64,
}

/// Runs the configuration to convergence, snapshots the iterate at a fixed
/// update cadence, and estimates `bhat` at every checkpoint.
///
/// Two deterministic passes: the first learns the converged update count so
/// the cadence lands the requested number of checkpoints; the second records
/// the snapshots.
pub fn track_bhat(config: &RunConfig, opts: &TrackOptions) -> Result<BhatTrack> {
    if opts.checkpoints < EPS_HAT_TAIL as u64 {
        return Err(Error::invalid(
            "checkpoints",
            format!("need at least {EPS_HAT_TAIL} checkpoints"),
        ));
    }
    let mut first = config.clone();
    first.record = harness::RecordSpec::default();
    let probe = harness::run(&first)?;
    if probe.diverged {
        return Err(Error::invalid("run", "diverged; cannot track the estimator"));
    }
    if !probe.converged {
        return Err(Error::invalid("run", "did not converge within the update budget"));
    }

    let cadence = (probe.model_updates / opts.checkpoints).max(1);
    let mut second = config.clone();
    second.record = harness::RecordSpec {
        grad_norm2_every: None,
        ghost_every: None,
        checkpoint_every_updates: Some(cadence),
    };
    let traced = harness::run(&second)?;
    debug_assert_eq!(traced.model_updates, probe.model_updates);

    let checkpoints = traced.checkpoints;
    if checkpoints.len() < EPS_HAT_TAIL {
        return Err(Error::invalid(
            "checkpoints",
            format!("run too short: only {} checkpoints recorded", checkpoints.len()),
        ));
    }

    let tail: Vec<f64> = checkpoints[checkpoints.len() - EPS_HAT_TAIL..]
        .iter()
        .map(|(_, x)| config.problem.grad_norm2(x))
        .collect::<Result<_>>()?;
    let eps_hat = estimate_epsilon_hat(&tail)?;

    let records: Vec<BhatRecord> = checkpoints
        .par_iter()
        .enumerate()
        .map(|(i, (step, x))| {
            let mut rng = seedstream::stream(
                seedstream::subseed(config.seed, &[&format!("bhat/{i}")]),
                &["bhat-draws"],
            );
            estimate_bhat(&config.problem, &config.oracle, x, *step, eps_hat, opts.samples, &mut rng)
        })
        .collect::<Result<_>>()?;

    let bhat_crit = running_bhat_crit(&records)?;
    Ok(BhatTrack {
        records,
        eps_hat,
        bhat_crit,
        model_updates: traced.model_updates,
        grad_evals: traced.grad_evals,
    })
}
