//! Stochastic gradient oracles with controlled noise and sparsity, plus
//! empirical measurement of their parameters.
//!
//! The Gaussian oracle returns `g(x) = grad f(x) + u` where `u` has
//! independent zero-mean Gaussian coordinates with per-coordinate variance
//! `(M ||grad f(x)||^2 + sigma^2) / d`, so that
//! `E ||u||^2 = M ||grad f(x)||^2 + sigma^2` holds exactly. The block oracle
//! picks one block of a block-separable problem uniformly and scales its
//! gradient by the block count, which is unbiased with relative sparsity
//! `Delta = 1/B` and relative variance exactly `B - 1`. The mask transform
//! keeps each coordinate with probability `1/alpha` and rescales survivors by
//! `alpha`, an unbiased sparsifier with `Delta = 1/alpha`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::problems::{BlockSeparableSpec, Problem};

/// Noise parameters: relative factor `M`, additive variance `sigma^2`, and an
/// optional mask sparsification factor `alpha >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub m: f64,
    pub sigma2: f64,
    pub mask_alpha: Option<f64>,
}

impl NoiseSpec {
    pub fn new(m: f64, sigma2: f64, mask_alpha: Option<f64>) -> Result<Self> {
        if !m.is_finite() || m < 0.0 {
            return Err(Error::invalid("M", format!("must be >= 0, got {m}")));
        }
        if !sigma2.is_finite() || sigma2 < 0.0 {
            return Err(Error::invalid("sigma2", format!("must be >= 0, got {sigma2}")));
        }
        if let Some(a) = mask_alpha {
            if !a.is_finite() || a < 1.0 {
                return Err(Error::invalid("mask_alpha", format!("must be >= 1, got {a}")));
            }
        }
        Ok(Self { m, sigma2, mask_alpha })
    }

    pub fn noiseless() -> Self {
        Self { m: 0.0, sigma2: 0.0, mask_alpha: None }
    }
}

/// One stochastic gradient draw. `support` may over-approximate the nonzero
/// coordinates (a dense oracle reports every coordinate).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub values: Vec<f64>,
    pub support: Vec<usize>,
}

impl GradientSample {
    fn dense(values: Vec<f64>) -> Self {
        let support = (0..values.len()).collect();
        Self { values, support }
    }
}

/// A configured oracle; `sample` dispatches on the kind and applies the
/// optional mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Oracle {
    /// `grad f(x)` plus Gaussian noise realizing Property-1 equality.
    Gaussian(NoiseSpec),
    /// Uniform single-block gradient of a block-separable problem, scaled by
    /// the block count; optionally mask-sparsified on top.
    BlockSparse { mask_alpha: Option<f64> },
}

impl Oracle {
    pub fn sample(&self, problem: &Problem, x: &[f64], rng: &mut ChaCha8Rng) -> Result<GradientSample> {
        match self {
            Oracle::Gaussian(noise) => {
                let base = NoiseSpec { mask_alpha: None, ..*noise };
                let sample = sample_gaussian_noise_gradient(problem, &base, x, rng)?;
                match noise.mask_alpha {
                    Some(alpha) => sparsify_gradient(sample, alpha, rng),
                    None => Ok(sample),
                }
            }
            Oracle::BlockSparse { mask_alpha } => {
                let spec = match problem {
                    Problem::BlockSeparable(spec) => spec,
                    Problem::Band(_) => {
                        return Err(Error::invalid(
                            "oracle",
                            "block-sparse oracle requires a block-separable problem",
                        ))
                    }
                };
                let sample = sample_block_sparse_gradient(spec, x, rng)?;
                match mask_alpha {
                    Some(alpha) => sparsify_gradient(sample, *alpha, rng),
                    None => Ok(sample),
                }
            }
        }
    }
}

/// `grad f(x) + u`, with `E u = 0` and `E ||u||^2 = M ||grad f||^2 + sigma^2`.
pub fn sample_gaussian_noise_gradient(
    problem: &Problem,
    noise: &NoiseSpec,
    x: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<GradientSample> {
    if noise.mask_alpha.is_some() {
        return Err(Error::invalid("mask_alpha", "must be absent for the raw Gaussian oracle"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("x"));
    }
    let mut g = problem.gradient(x)?;
    if noise.m > 0.0 || noise.sigma2 > 0.0 {
        let d = g.len() as f64;
        let grad_norm2: f64 = g.iter().map(|v| v * v).sum();
        let per_coord_sd = ((noise.m * grad_norm2 + noise.sigma2) / d).sqrt();
        for gi in g.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *gi += per_coord_sd * z;
        }
    }
    Ok(GradientSample::dense(g))
}

/// Picks a block uniformly and returns `B` times its gradient, embedded in
/// the full dimension with zeros elsewhere.
pub fn sample_block_sparse_gradient(
    spec: &BlockSeparableSpec,
    x: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<GradientSample> {
    if x.len() != spec.total_dim() {
        return Err(Error::DimensionMismatch { expected: spec.total_dim(), got: x.len() });
    }
    let b = spec.blocks;
    let i = rng.random_range(0..b);
    let range = spec.block_range(i);
    let inner_grad = crate::problems::quadratic_band_gradient(&spec.inner, &x[range.clone()])?;
    let mut values = vec![0.0; x.len()];
    let scale = b as f64;
    for (slot, g) in values[range.clone()].iter_mut().zip(&inner_grad) {
        *slot = scale * g;
    }
    Ok(GradientSample { values, support: range.collect() })
}

/// Unbiased mask: each coordinate survives with probability `1/alpha` and is
/// rescaled by `alpha`. `alpha = 1` is the identity.
pub fn sparsify_gradient(
    sample: GradientSample,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GradientSample> {
    if !alpha.is_finite() || alpha < 1.0 {
        return Err(Error::invalid("alpha", format!("must be >= 1, got {alpha}")));
    }
    if alpha == 1.0 {
        return Ok(sample);
    }
    let keep_prob = 1.0 / alpha;
    let mut values = sample.values;
    let mut support = Vec::new();
    for v in &sample.support {
        if rng.random::<f64>() < keep_prob {
            values[*v] *= alpha;
            support.push(*v);
        } else {
            values[*v] = 0.0;
        }
    }
    Ok(GradientSample { values, support })
}

/// Empirical `(sigma_star^2, M)` over a finite point set, split at
/// `||grad f(x)||^2 <= eps`. A region with no points reports `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEstimate {
    pub sigma_star2: Option<f64>,
    pub m: Option<f64>,
}

pub fn measure_noise_params(
    problem: &Problem,
    oracle: &Oracle,
    points: &[Vec<f64>],
    eps: f64,
    samples_per_point: usize,
    rng: &mut ChaCha8Rng,
) -> Result<NoiseEstimate> {
    if points.is_empty() {
        return Err(Error::invalid("points", "must be nonempty"));
    }
    if samples_per_point < 2 {
        return Err(Error::invalid("samples_per_point", "must be >= 2"));
    }
    let mut sigma_star2: Option<f64> = None;
    let mut m: Option<f64> = None;
    for x in points {
        let grad = problem.gradient(x)?;
        let grad_norm2: f64 = grad.iter().map(|v| v * v).sum();
        let mut mean_sq = 0.0;
        for _ in 0..samples_per_point {
            let g = oracle.sample(problem, x, rng)?;
            let sq: f64 = g
                .values
                .iter()
                .zip(&grad)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            mean_sq += sq;
        }
        mean_sq /= samples_per_point as f64;
        if grad_norm2 <= eps {
            sigma_star2 = Some(sigma_star2.map_or(mean_sq, |s: f64| s.max(mean_sq)));
        } else {
            let ratio = mean_sq / grad_norm2;
            m = Some(m.map_or(ratio, |s: f64| s.max(ratio)));
        }
    }
    Ok(NoiseEstimate { sigma_star2, m })
}

/// Empirical sparsity: the maximum, over points and coordinates, of the
/// frequency with which the coordinate appears in the sample support.
pub fn measure_delta(
    problem: &Problem,
    oracle: &Oracle,
    points: &[Vec<f64>],
    samples_per_point: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::invalid("points", "must be nonempty"));
    }
    if samples_per_point < 1 {
        return Err(Error::invalid("samples_per_point", "must be >= 1"));
    }
    let dim = problem.dim();
    let mut max_freq = 0.0f64;
    for x in points {
        let mut counts = vec![0u64; dim];
        for _ in 0..samples_per_point {
            let g = oracle.sample(problem, x, rng)?;
            for v in &g.support {
                counts[*v] += 1;
            }
        }
        let point_max = counts.iter().copied().max().unwrap_or(0);
        max_freq = max_freq.max(point_max as f64 / samples_per_point as f64);
    }
    Ok(max_freq)
}
