//! Update machinery for the shared-iterate SGD template under three
//! staleness models, with write tracing and a ghost sequence.
//!
//! A run is a strictly sequential state machine over virtual iterations `t`:
//! asynchrony is simulated, never executed. Each virtual iteration consumes
//! one stochastic gradient `g_t` sampled at the committed live iterate `x_t`.
//! Coordinate writes are atomic and additive, so the live iterate always
//! equals `x_0 - gamma * sum_k J_k^t g_k` for diagonal selector matrices
//! recorded in the [`WriteTrace`]. The ghost iterate applies every gradient
//! immediately (`ghost_{t+1} = ghost_t - gamma g_t`); the squared distance
//! between the two is the staleness drift `R_t`.
//!
//! Three schedules are provided:
//! - `MiniBatch(b)`: `b` gradients read the same iterate, one summed write.
//! - `ExactDelay(tau)`: every gradient lands exactly `tau` iterations after
//!   its read; the iterate is pinned at `x_0` during warm-up.
//! - `RandomCoordinateDelay(tau)`: each support coordinate of `g_t` lands
//!   independently after a uniform delay in `{1, ..., tau}`.
//!
//! The random streams for oracle noise and for delay draws are separate, so
//! schedules with the same parallelism consume identical gradient sequences.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::oracles::{GradientSample, Oracle};
use crate::problems::Problem;
use crate::seedstream;

/// Live iterate magnitude `(1/d) ||x||` beyond which a run is declared
/// diverged and aborted.
pub const DIVERGENCE_SCALE: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    MiniBatch,
    ExactDelay,
    RandomCoordinateDelay,
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::MiniBatch => "minibatch",
            ScheduleKind::ExactDelay => "exact-delay",
            ScheduleKind::RandomCoordinateDelay => "random-delay",
        }
    }
}

/// Schedule configuration. `effective_lr` is the per-gradient stepsize, i.e.
/// the model-update stepsize already divided by the parallelism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    /// Batch size for `MiniBatch`, maximal delay otherwise.
    pub parallelism: u64,
    pub effective_lr: f64,
}

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind, parallelism: u64, effective_lr: f64) -> Result<Self> {
        if parallelism < 1 {
            return Err(Error::invalid("parallelism", "must be >= 1"));
        }
        if !effective_lr.is_finite() || effective_lr <= 0.0 {
            return Err(Error::invalid("effective_lr", format!("must be > 0, got {effective_lr}")));
        }
        Ok(Self { kind, parallelism, effective_lr })
    }
}

/// One write event: coordinates of gradient `grad_index` landing during
/// virtual iteration `apply_step` (visible in the iterate from step
/// `apply_step + 1` on).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub grad_index: u64,
    pub apply_step: u64,
    pub coords: Vec<usize>,
}

/// Per-update record of which gradient coordinates were applied when; the
/// diagonal selector matrices of the iterate identity in event form.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WriteTrace {
    pub events: Vec<TraceEvent>,
}

impl WriteTrace {
    /// Total number of coordinate writes recorded for gradient `k`.
    pub fn coords_written_for(&self, k: u64) -> usize {
        self.events
            .iter()
            .filter(|e| e.grad_index == k)
            .map(|e| e.coords.len())
            .sum()
    }
}

/// Measured degree of parallelism of a trace: the largest span between a
/// gradient's read and the completion of its writes, counted inclusively. A
/// fully synchronous trace (and the empty trace) measures 1.
pub fn degree_of_parallelism(trace: &WriteTrace) -> u64 {
    trace
        .events
        .iter()
        .map(|e| e.apply_step - e.grad_index + 1)
        .max()
        .unwrap_or(0)
        .max(1)
}

/// Rebuilds `x_0 - gamma * sum_k J_k^t g_k` from a trace and the gradient
/// log, including every write that landed during iterations `< as_of_step`.
/// Events are replayed in application order so the result tracks the live
/// iterate to floating-point accuracy.
pub fn reconstruct_iterate(
    trace: &WriteTrace,
    gradients: &[GradientSample],
    x0: &[f64],
    gamma: f64,
    as_of_step: u64,
) -> Result<Vec<f64>> {
    let mut order: Vec<&TraceEvent> = trace
        .events
        .iter()
        .filter(|e| e.apply_step < as_of_step)
        .collect();
    order.sort_by_key(|e| e.apply_step);
    let mut x = x0.to_vec();
    for event in order {
        let g = gradients
            .get(event.grad_index as usize)
            .ok_or(Error::MismatchedLog { index: event.grad_index, logged: gradients.len() })?;
        for &v in &event.coords {
            x[v] -= gamma * g.values[v];
        }
    }
    Ok(x)
}

/// Outcome of one `advance` call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    /// At least one coordinate write landed, i.e. the live iterate moved
    /// (a model update).
    pub wrote: bool,
    /// Virtual iterations consumed: the batch size for mini-batch, 1
    /// otherwise.
    pub steps_advanced: u64,
}

#[derive(Debug, Clone, Default)]
struct Recording {
    trace: WriteTrace,
    gradients: Vec<GradientSample>,
}

/// Pending coordinate writes keyed by the iteration at which they land.
#[derive(Debug, Clone)]
struct PendingWheel {
    buckets: Vec<Vec<(u32, f64)>>,
}

impl PendingWheel {
    fn new(tau: u64) -> Self {
        Self { buckets: vec![Vec::new(); tau as usize] }
    }

    fn slot(&self, step: u64) -> usize {
        (step % self.buckets.len() as u64) as usize
    }

    fn push(&mut self, apply_step: u64, coord: usize, value: f64) {
        let slot = self.slot(apply_step);
        self.buckets[slot].push((coord as u32, value));
    }

    fn is_empty(&self) -> bool {
        self.buckets.iter().all(Vec::is_empty)
    }
}

/// Sequential simulator of one run: problem, oracle, schedule, live and
/// ghost iterates, pending writes, and counters.
#[derive(Debug, Clone)]
pub struct Simulator {
    problem: Problem,
    oracle: Oracle,
    spec: ScheduleSpec,
    x: Vec<f64>,
    ghost: Vec<f64>,
    wheel: PendingWheel,
    step: u64,
    grad_evals: u64,
    model_updates: u64,
    diverged: bool,
    rng_noise: ChaCha8Rng,
    rng_delay: ChaCha8Rng,
    recording: Option<Recording>,
}

impl Simulator {
    pub fn new(
        problem: Problem,
        oracle: Oracle,
        spec: ScheduleSpec,
        x0: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        if x0.len() != problem.dim() {
            return Err(Error::DimensionMismatch { expected: problem.dim(), got: x0.len() });
        }
        if matches!(oracle, Oracle::BlockSparse { .. })
            && !matches!(problem, Problem::BlockSeparable(_))
        {
            return Err(Error::invalid(
                "oracle",
                "block-sparse oracle requires a block-separable problem",
            ));
        }
        let wheel_len = match spec.kind {
            ScheduleKind::MiniBatch => 1,
            _ => spec.parallelism,
        };
        Ok(Self {
            ghost: x0.clone(),
            wheel: PendingWheel::new(wheel_len),
            x: x0,
            problem,
            oracle,
            spec,
            step: 0,
            grad_evals: 0,
            model_updates: 0,
            diverged: false,
            rng_noise: seedstream::stream(seed, &["noise"]),
            rng_delay: seedstream::stream(seed, &["delay"]),
            recording: None,
        })
    }

    /// Enables write-trace and gradient-log recording (verification mode).
    pub fn with_recording(mut self) -> Self {
        self.recording = Some(Recording::default());
        self
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn ghost(&self) -> &[f64] {
        &self.ghost
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn grad_evals(&self) -> u64 {
        self.grad_evals
    }

    pub fn model_updates(&self) -> u64 {
        self.model_updates
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn trace(&self) -> Option<&WriteTrace> {
        self.recording.as_ref().map(|r| &r.trace)
    }

    pub fn gradient_log(&self) -> Option<&[GradientSample]> {
        self.recording.as_ref().map(|r| r.gradients.as_slice())
    }

    /// `||x - ghost||^2` at the current step: the single-trajectory
    /// realization of the staleness drift `R_t`.
    pub fn ghost_deviation(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.ghost)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Exact squared gradient norm at the live iterate.
    pub fn live_grad_norm2(&self) -> Result<f64> {
        self.problem.grad_norm2(&self.x)
    }

    /// Performs one scheduling quantum: a full batch for mini-batch, one
    /// virtual iteration for the delay schedules. No-op once diverged.
    pub fn advance(&mut self) -> Result<StepOutcome> {
        if self.diverged {
            return Ok(StepOutcome { wrote: false, steps_advanced: 0 });
        }
        let outcome = match self.spec.kind {
            ScheduleKind::MiniBatch => self.advance_minibatch()?,
            ScheduleKind::ExactDelay => self.advance_exact_delay()?,
            ScheduleKind::RandomCoordinateDelay => self.advance_random_delay()?,
        };
        if outcome.wrote {
            self.model_updates += 1;
            self.check_divergence();
        }
        Ok(outcome)
    }

    fn sample(&mut self) -> Result<GradientSample> {
        let g = self.oracle.sample(&self.problem, &self.x, &mut self.rng_noise)?;
        self.grad_evals += 1;
        Ok(g)
    }

    fn ghost_apply(&mut self, g: &GradientSample) {
        let gamma = self.spec.effective_lr;
        for &v in &g.support {
            self.ghost[v] -= gamma * g.values[v];
        }
    }

    fn record(&mut self, g: GradientSample, events: impl IntoIterator<Item = TraceEvent>) {
        if let Some(rec) = self.recording.as_mut() {
            rec.trace.events.extend(events);
            rec.gradients.push(g);
        }
    }

    fn advance_minibatch(&mut self) -> Result<StepOutcome> {
        let b = self.spec.parallelism;
        let gamma = self.spec.effective_lr;
        let batch_start = self.step;
        let apply_step = batch_start + b - 1;
        let mut sum = vec![0.0; self.x.len()];
        for i in 0..b {
            let g = self.sample()?;
            self.ghost_apply(&g);
            for &v in &g.support {
                sum[v] += g.values[v];
            }
            let event = TraceEvent {
                grad_index: batch_start + i,
                apply_step,
                coords: g.support.clone(),
            };
            self.record(g, [event]);
        }
        for (xi, si) in self.x.iter_mut().zip(&sum) {
            *xi -= gamma * si;
        }
        self.step += b;
        Ok(StepOutcome { wrote: true, steps_advanced: b })
    }

    fn advance_exact_delay(&mut self) -> Result<StepOutcome> {
        let tau = self.spec.parallelism;
        let t = self.step;
        let g = self.sample()?;
        self.ghost_apply(&g);
        let apply_step = t + tau - 1;
        for &v in &g.support {
            self.wheel.push(apply_step, v, g.values[v]);
        }
        let event = TraceEvent { grad_index: t, apply_step, coords: g.support.clone() };
        self.record(g, [event]);
        let wrote = self.drain_due(t);
        self.step += 1;
        Ok(StepOutcome { wrote, steps_advanced: 1 })
    }

    fn advance_random_delay(&mut self) -> Result<StepOutcome> {
        let tau = self.spec.parallelism;
        let t = self.step;
        let g = self.sample()?;
        self.ghost_apply(&g);
        // Group this gradient's coordinates by drawn delay so the trace
        // carries one event per landing step.
        let mut by_delay: Vec<Vec<usize>> = vec![Vec::new(); tau as usize];
        for &v in &g.support {
            let delay = if tau == 1 { 1 } else { self.rng_delay.random_range(1..=tau) };
            self.wheel.push(t + delay - 1, v, g.values[v]);
            by_delay[(delay - 1) as usize].push(v);
        }
        let events: Vec<TraceEvent> = by_delay
            .into_iter()
            .enumerate()
            .filter(|(_, coords)| !coords.is_empty())
            .map(|(offset, coords)| TraceEvent {
                grad_index: t,
                apply_step: t + offset as u64,
                coords,
            })
            .collect();
        self.record(g, events);
        let wrote = self.drain_due(t);
        self.step += 1;
        Ok(StepOutcome { wrote, steps_advanced: 1 })
    }

    /// Applies every pending write due at iteration `step`.
    fn drain_due(&mut self, step: u64) -> bool {
        let gamma = self.spec.effective_lr;
        let slot = self.wheel.slot(step);
        let writes = std::mem::take(&mut self.wheel.buckets[slot]);
        let wrote = !writes.is_empty();
        for (coord, value) in writes {
            self.x[coord as usize] -= gamma * value;
        }
        wrote
    }

    /// Flushes the whole pending buffer in due order without sampling new
    /// gradients. Used by conservation checks, never by the stopping rule.
    pub fn drain_pending(&mut self) {
        let tau = self.wheel.buckets.len() as u64;
        for step in self.step..self.step + tau {
            self.drain_due(step);
            if self.wheel.is_empty() {
                break;
            }
        }
    }

    fn check_divergence(&mut self) {
        let mut norm2 = 0.0;
        for v in &self.x {
            norm2 += v * v;
        }
        let scale = norm2.sqrt() / self.x.len() as f64;
        if !norm2.is_finite() || scale > DIVERGENCE_SCALE {
            self.diverged = true;
        }
    }
}
