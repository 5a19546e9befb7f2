//! Desk-scale simulator for parallel SGD under staleness.
//!
//! The crate models three update schemes over one shared iterate — mini-batch
//! averaging, exact gradient delay, and coordinate-wise random delay (a
//! Hogwild-style model) — together with controlled stochastic-gradient
//! oracles (relative + additive Gaussian noise, block-sparse gradients,
//! unbiased mask sparsification). Closed-form calculators for the critical
//! stepsize, critical batch size, speedup curves and staleness-drift bounds
//! live in [`theory`]; [`harness`] tunes stepsizes over a logarithmic grid and
//! assembles speedup tables; [`estimators`] tracks the empirical
//! critical-batch-size estimate along a trajectory.
//!
//! Every run is deterministic given its seed: random streams are derived from
//! `(master seed, labels)` via [`seedstream`], and asynchrony is simulated
//! sequentially, not executed on threads.

pub mod error;
pub mod estimators;
pub mod harness;
pub mod oracles;
pub mod problems;
pub mod schedulers;
pub mod seedstream;
pub mod theory;

pub use error::{Error, Result};
