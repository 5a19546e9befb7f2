//! Deterministic objective functions: values, exact gradients, curvature
//! constants, and known optima.
//!
//! Two families are provided. The band quadratic is
//! `f(x) = 1/2 <Ax, x> + lambda/2 ||x||^2` with `A` the tridiagonal Toeplitz
//! matrix carrying 2 on the diagonal and -1 on both off-diagonals; `A` is
//! applied as a stencil and never stored densely. The block-separable family
//! sums an independent copy of a band quadratic over `B` contiguous
//! coordinate blocks, which is the lower-bound construction for sparse
//! stochastic gradients.
//!
//! Both families have no linear term, so the minimizer is the origin and the
//! optimal value is zero.

use crate::error::{Error, Result};

/// Band quadratic `1/2 <Ax, x> + lambda/2 ||x||^2`, matrix-free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticBandSpec {
    /// Ambient dimension, at least 2.
    pub dim: usize,
    /// Ridge coefficient, nonnegative.
    pub lambda: f64,
}

impl QuadraticBandSpec {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("dim", format!("must be >= 2, got {dim}")));
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::invalid("lambda", format!("must be >= 0, got {lambda}")));
        }
        Ok(Self { dim, lambda })
    }

    /// The default synthetic instance: `d = 20`, `lambda = 0.2`.
    pub fn default_instance() -> Self {
        Self { dim: 20, lambda: 0.2 }
    }
}

/// Sum of a band quadratic over `blocks` disjoint contiguous blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSeparableSpec {
    pub inner: QuadraticBandSpec,
    /// Number of blocks `B >= 1`; total dimension is `B * inner.dim`.
    pub blocks: usize,
}

impl BlockSeparableSpec {
    pub fn new(inner: QuadraticBandSpec, blocks: usize) -> Result<Self> {
        if blocks < 1 {
            return Err(Error::invalid("blocks", "must be >= 1"));
        }
        Ok(Self { inner, blocks })
    }

    pub fn total_dim(&self) -> usize {
        self.blocks * self.inner.dim
    }

    /// Coordinate range of block `i`.
    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        let d = self.inner.dim;
        i * d..(i + 1) * d
    }

    /// Relative sparsity of the uniform block oracle, `Delta = 1/B`.
    pub fn delta(&self) -> f64 {
        1.0 / self.blocks as f64
    }
}

/// Applies the tridiagonal stencil `(Ax)_i = 2 x_i - x_{i-1} - x_{i+1}`.
fn band_matvec_into(x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for i in 0..d {
        let left = if i > 0 { x[i - 1] } else { 0.0 };
        let right = if i + 1 < d { x[i + 1] } else { 0.0 };
        out[i] = 2.0 * x[i] - left - right;
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `1/2 <Ax, x> + lambda/2 ||x||^2` without materializing `A`.
pub fn quadratic_band_value(spec: &QuadraticBandSpec, x: &[f64]) -> Result<f64> {
    check_dim(spec.dim, x.len())?;
    let d = x.len();
    let mut quad = 0.0;
    let mut sq = 0.0;
    for i in 0..d {
        let left = if i > 0 { x[i - 1] } else { 0.0 };
        let right = if i + 1 < d { x[i + 1] } else { 0.0 };
        quad += (2.0 * x[i] - left - right) * x[i];
        sq += x[i] * x[i];
    }
    Ok(0.5 * quad + 0.5 * spec.lambda * sq)
}

/// Exact gradient `Ax + lambda x`.
pub fn quadratic_band_gradient(spec: &QuadraticBandSpec, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(spec.dim, x.len())?;
    let mut g = vec![0.0; x.len()];
    band_matvec_into(x, &mut g);
    for (gi, xi) in g.iter_mut().zip(x) {
        *gi += spec.lambda * xi;
    }
    Ok(g)
}

/// Smoothness and strong-convexity constants of the band quadratic.
///
/// The tridiagonal Toeplitz eigenvalues are `2 - 2 cos(k pi / (d+1))` for
/// `k = 1..d`; the ridge shifts every eigenvalue by `lambda`.
pub fn curvature_constants(spec: &QuadraticBandSpec) -> (f64, f64) {
    let d = spec.dim as f64;
    let l = 2.0 - 2.0 * (d * std::f64::consts::PI / (d + 1.0)).cos() + spec.lambda;
    let mu = 2.0 - 2.0 * (std::f64::consts::PI / (d + 1.0)).cos() + spec.lambda;
    (l, mu)
}

/// Value and gradient of the block-separable sum, per-block stencils
/// concatenated.
pub fn block_separable_value_gradient(
    spec: &BlockSeparableSpec,
    x: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_dim(spec.total_dim(), x.len())?;
    let mut value = 0.0;
    let mut grad = vec![0.0; x.len()];
    for i in 0..spec.blocks {
        let range = spec.block_range(i);
        let xb = &x[range.clone()];
        value += quadratic_band_value(&spec.inner, xb)?;
        let gb = quadratic_band_gradient(&spec.inner, xb)?;
        grad[range].copy_from_slice(&gb);
    }
    Ok((value, grad))
}

/// A problem instance: objective, exact gradient, curvature constants, and
/// the known optimum. All quadratics here have `x_star = 0`, `f_star = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Problem {
    Band(QuadraticBandSpec),
    BlockSeparable(BlockSeparableSpec),
}

impl Problem {
    pub fn dim(&self) -> usize {
        match self {
            Problem::Band(s) => s.dim,
            Problem::BlockSeparable(s) => s.total_dim(),
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        match self {
            Problem::Band(s) => quadratic_band_value(s, x),
            Problem::BlockSeparable(s) => Ok(block_separable_value_gradient(s, x)?.0),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Problem::Band(s) => quadratic_band_gradient(s, x),
            Problem::BlockSeparable(s) => Ok(block_separable_value_gradient(s, x)?.1),
        }
    }

    /// Smoothness constant `L`.
    pub fn smoothness(&self) -> f64 {
        match self {
            Problem::Band(s) => curvature_constants(s).0,
            // Block-diagonal with identical blocks: spectrum equals the
            // inner problem's spectrum.
            Problem::BlockSeparable(s) => curvature_constants(&s.inner).0,
        }
    }

    /// Strong-convexity constant `mu`.
    pub fn strong_convexity(&self) -> f64 {
        match self {
            Problem::Band(s) => curvature_constants(s).1,
            Problem::BlockSeparable(s) => curvature_constants(&s.inner).1,
        }
    }

    pub fn x_star(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    pub fn f_star(&self) -> f64 {
        0.0
    }

    pub fn grad_norm2(&self, x: &[f64]) -> Result<f64> {
        Ok(self.gradient(x)?.iter().map(|g| g * g).sum())
    }
}
