//! Experiment driver: runs configured simulations to a stopping criterion,
//! tunes stepsizes over the logarithmic grid, assembles speedup tables, and
//! produces paired drift-measurement/bound trajectories.
//!
//! Oracle complexity `T(b, eps)` is always reported in gradient evaluations;
//! normalized parallel time is `(T / parallelism) / T_ref` with the
//! parallelism-1 row as reference. Grid points and seeds are embarrassingly
//! parallel and are executed with rayon; results are keyed by configuration,
//! never by completion order, so assembly is deterministic.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::oracles::Oracle;
use crate::problems::Problem;
use crate::schedulers::{ScheduleKind, ScheduleSpec, Simulator};
use crate::seedstream;
use crate::theory;

/// Initial iterate: either a constant fill or an explicit vector.
#[derive(Debug, Clone, PartialEq)]
pub enum X0 {
    Fill(f64),
    Vector(Vec<f64>),
}

impl X0 {
    pub fn materialize(&self, dim: usize) -> Result<Vec<f64>> {
        match self {
            X0::Fill(v) => Ok(vec![*v; dim]),
            X0::Vector(x) => {
                if x.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
                }
                Ok(x.clone())
            }
        }
    }
}

/// Stopping rule, checked after every model update on the live iterate
/// (pending delayed writes excluded).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// `(1/d) ||x||_2 <= threshold`.
    IterateNorm { threshold: f64 },
    /// `||grad f(x)||^2 <= eps`.
    GradNorm2 { eps: f64 },
}

impl StopRule {
    fn is_met(&self, problem: &Problem, x: &[f64]) -> Result<bool> {
        match self {
            StopRule::IterateNorm { threshold } => {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                Ok(norm / x.len() as f64 <= *threshold)
            }
            StopRule::GradNorm2 { eps } => Ok(problem.grad_norm2(x)? <= *eps),
        }
    }
}

/// Trajectory recording cadences. Gradient-norm and ghost samples are taken
/// per scheduling quantum and tagged with the virtual step; checkpoints are
/// taken per model update and snapshot the live iterate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RecordSpec {
    pub grad_norm2_every: Option<u64>,
    pub ghost_every: Option<u64>,
    pub checkpoint_every_updates: Option<u64>,
}

/// Full description of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: Problem,
    pub oracle: Oracle,
    pub schedule: ScheduleSpec,
    pub stop: StopRule,
    pub x0: X0,
    pub max_updates: u64,
    pub seed: u64,
    pub record: RecordSpec,
}

/// Default model-update cap; worst converging desk-scale configs finish far
/// below this, so it only reins in runaway grid points.
pub const DEFAULT_MAX_UPDATES: u64 = 1_000_000;

/// Outcome and recorded statistics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub converged: bool,
    pub diverged: bool,
    /// `T(b, eps)`: stochastic gradient evaluations consumed.
    pub grad_evals: u64,
    pub model_updates: u64,
    pub grad_norm2_series: Vec<(u64, f64)>,
    pub ghost_series: Vec<(u64, f64)>,
    pub checkpoints: Vec<(u64, Vec<f64>)>,
    pub final_x: Vec<f64>,
}

enum DriveMode {
    UntilStop,
    FixedAdvances(u64),
}

/// Runs the configured simulation until the stopping rule fires, the update
/// budget is exhausted, or the iterate diverges.
pub fn run(config: &RunConfig) -> Result<RunResult> {
    drive(config, DriveMode::UntilStop)
}

/// Runs exactly `advances` scheduling quanta, ignoring the stopping rule.
/// Used for drift trajectories where seeds must stay step-aligned.
pub fn run_fixed(config: &RunConfig, advances: u64) -> Result<RunResult> {
    drive(config, DriveMode::FixedAdvances(advances))
}

fn drive(config: &RunConfig, mode: DriveMode) -> Result<RunResult> {
    let x0 = config.x0.materialize(config.problem.dim())?;
    let mut sim = Simulator::new(config.problem, config.oracle, config.schedule, x0, config.seed)?;

    let mut result = RunResult {
        converged: false,
        diverged: false,
        grad_evals: 0,
        model_updates: 0,
        grad_norm2_series: Vec::new(),
        ghost_series: Vec::new(),
        checkpoints: Vec::new(),
        final_x: Vec::new(),
    };

    if let Some(c) = config.record.grad_norm2_every {
        if c > 0 {
            result.grad_norm2_series.push((0, sim.live_grad_norm2()?));
        }
    }
    if let Some(c) = config.record.ghost_every {
        if c > 0 {
            result.ghost_series.push((0, 0.0));
        }
    }

    // Warm-up iterations of the delay schedules do not write, so the total
    // advance budget is padded beyond the model-update budget.
    let advance_guard = config
        .max_updates
        .saturating_mul(2)
        .saturating_add(2 * config.schedule.parallelism + 64);
    let mut advances = 0u64;
    loop {
        let out = sim.advance()?;
        advances += 1;

        if !sim.diverged() {
            if let Some(c) = config.record.grad_norm2_every {
                if c > 0 && sim.step() % c == 0 {
                    result.grad_norm2_series.push((sim.step(), sim.live_grad_norm2()?));
                }
            }
            if let Some(c) = config.record.ghost_every {
                if c > 0 && sim.step() % c == 0 {
                    result.ghost_series.push((sim.step(), sim.ghost_deviation()));
                }
            }
        }

        if sim.diverged() {
            result.diverged = true;
            break;
        }

        if out.wrote {
            if let Some(c) = config.record.checkpoint_every_updates {
                if c > 0 && sim.model_updates() % c == 0 {
                    result.checkpoints.push((sim.step(), sim.x().to_vec()));
                }
            }
            if matches!(mode, DriveMode::UntilStop) {
                if config.stop.is_met(&sim.problem().clone(), sim.x())? {
                    result.converged = true;
                    break;
                }
                if sim.model_updates() >= config.max_updates {
                    break;
                }
            }
        }

        match mode {
            DriveMode::FixedAdvances(n) if advances >= n => break,
            _ if advances >= advance_guard => break,
            _ => {}
        }
    }

    result.grad_evals = sim.grad_evals();
    result.model_updates = sim.model_updates();
    result.final_x = sim.x().to_vec();
    Ok(result)
}

/// The tuning grid `gamma in 1.1/(1+M) * {2^-1, ..., 2^-points}`, largest
/// first. Gammas are per-gradient (effective) stepsizes.
pub fn stepsize_grid(m: f64, points: u32) -> Vec<f64> {
    let base = 1.1 / (1.0 + m);
    (1..=points).map(|k| base * 2f64.powi(-(k as i32))).collect()
}

/// Tuning controls beyond the run template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneOptions {
    pub seeds: u32,
    pub grid_points: u32,
    /// Hard cap on gradient evaluations per run.
    pub eval_budget: u64,
    /// Once some grid point has fully converged with mean cost `T`, later
    /// runs are cut off at `cutoff_factor * T` evaluations; they cannot win
    /// and are reported as not converged within budget.
    pub cutoff_factor: f64,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self { seeds: 3, grid_points: 20, eval_budget: 1_000_000, cutoff_factor: 4.0 }
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub gamma: f64,
    pub mean_grad_evals: f64,
    pub mean_model_updates: f64,
    pub converged_fraction: f64,
    pub per_seed_grad_evals: Vec<u64>,
}

/// Grid report with the winning stepsize.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningResult {
    pub grid: Vec<GridPoint>,
    pub best_gamma: f64,
    pub best_mean_grad_evals: f64,
    pub best_mean_model_updates: f64,
    pub best_per_seed_grad_evals: Vec<u64>,
    /// Set when the winner sits at either end of the grid; tuned optima are
    /// expected to be interior.
    pub best_at_endpoint: bool,
}

fn run_seed_label(kind: ScheduleKind, parallelism: u64, gamma_index: usize, seed_index: u32) -> String {
    format!(
        "run/{}/p={}/g={}/s={}",
        kind.name(),
        parallelism,
        gamma_index,
        seed_index
    )
}

/// Evaluates the full stepsize grid (each point averaged over the configured
/// seeds) and returns the point minimizing mean gradient evaluations among
/// fully converged points; ties prefer the larger stepsize. Fails with the
/// full grid report when nothing converges.
pub fn tune_stepsize(template: &RunConfig, m_for_grid: f64, opts: &TuneOptions) -> Result<TuningResult> {
    let gammas = stepsize_grid(m_for_grid, opts.grid_points);
    let evals_per_update = match template.schedule.kind {
        ScheduleKind::MiniBatch => template.schedule.parallelism,
        _ => 1,
    };

    let mut grid = Vec::with_capacity(gammas.len());
    let mut best: Option<(usize, f64)> = None; // (grid index, mean evals)

    for (gi, &gamma) in gammas.iter().enumerate() {
        let eval_cap = match best {
            Some((_, best_evals)) => {
                let cutoff = (opts.cutoff_factor * best_evals).ceil() as u64;
                cutoff.min(opts.eval_budget).max(evals_per_update)
            }
            None => opts.eval_budget,
        };
        let update_cap = (eval_cap / evals_per_update).max(1).min(template.max_updates);

        let runs: Vec<RunResult> = (0..opts.seeds)
            .into_par_iter()
            .map(|si| {
                let mut cfg = template.clone();
                cfg.schedule =
                    ScheduleSpec::new(template.schedule.kind, template.schedule.parallelism, gamma)?;
                cfg.max_updates = update_cap;
                cfg.seed = seedstream::subseed(
                    template.seed,
                    &[&run_seed_label(cfg.schedule.kind, cfg.schedule.parallelism, gi, si)],
                );
                run(&cfg)
            })
            .collect::<Result<_>>()?;

        let converged = runs.iter().filter(|r| r.converged).count();
        let per_seed: Vec<u64> = runs.iter().map(|r| r.grad_evals).collect();
        let mean_evals = per_seed.iter().sum::<u64>() as f64 / runs.len() as f64;
        let mean_updates =
            runs.iter().map(|r| r.model_updates).sum::<u64>() as f64 / runs.len() as f64;
        let fraction = converged as f64 / runs.len() as f64;

        if fraction == 1.0 {
            // Strict inequality keeps the earlier (larger) gamma on ties.
            if best.is_none_or(|(_, b)| mean_evals < b) {
                best = Some((gi, mean_evals));
            }
        }

        grid.push(GridPoint {
            gamma,
            mean_grad_evals: mean_evals,
            mean_model_updates: mean_updates,
            converged_fraction: fraction,
            per_seed_grad_evals: per_seed,
        });
    }

    match best {
        None => Err(Error::NoConvergingStepsize { grid }),
        Some((gi, mean)) => Ok(TuningResult {
            best_gamma: gammas[gi],
            best_mean_grad_evals: mean,
            best_mean_model_updates: grid[gi].mean_model_updates,
            best_per_seed_grad_evals: grid[gi].per_seed_grad_evals.clone(),
            best_at_endpoint: gi == 0 || gi + 1 == gammas.len(),
            grid,
        }),
    }
}

/// One row of a speedup table. `normalized_parallel_time` is
/// `(T_mean / parallelism) / T_ref`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub parallelism: u64,
    pub converged: bool,
    pub best_gamma: Option<f64>,
    pub t_mean: Option<f64>,
    pub t_sd: Option<f64>,
    pub model_updates_mean: Option<f64>,
    pub normalized_parallel_time: Option<f64>,
    pub best_at_endpoint: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupTable {
    pub kind: ScheduleKind,
    pub seed_count: u32,
    pub rows: Vec<SweepRow>,
}

fn sample_sd(values: &[u64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let var = values
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / (values.len() - 1) as f64;
    var.sqrt()
}

/// Tunes each parallelism level and reports mean and sample-sd oracle
/// complexity plus parallel time normalized by the parallelism-1 row. The
/// list must contain 1; per-row tuning failures are carried in the row, not
/// propagated.
pub fn speedup_sweep(
    template: &RunConfig,
    m_for_grid: f64,
    parallelism_list: &[u64],
    opts: &TuneOptions,
) -> Result<SpeedupTable> {
    if parallelism_list.is_empty() {
        return Err(Error::invalid("parallelism_list", "must be nonempty"));
    }
    if !parallelism_list.contains(&1) {
        return Err(Error::invalid("parallelism_list", "must contain 1 (the reference row)"));
    }

    let tuned: Vec<(u64, Result<TuningResult>)> = parallelism_list
        .par_iter()
        .map(|&p| {
            let mut t = template.clone();
            t.schedule = ScheduleSpec {
                kind: template.schedule.kind,
                parallelism: p,
                effective_lr: template.schedule.effective_lr,
            };
            (p, tune_stepsize(&t, m_for_grid, opts))
        })
        .collect();

    let t_ref = tuned
        .iter()
        .find(|(p, _)| *p == 1)
        .and_then(|(_, r)| r.as_ref().ok().map(|t| t.best_mean_grad_evals));

    let rows = tuned
        .into_iter()
        .map(|(p, r)| match r {
            Ok(t) => {
                let normalized = if p == 1 {
                    Some(1.0)
                } else {
                    t_ref.map(|tr| (t.best_mean_grad_evals / p as f64) / tr)
                };
                SweepRow {
                    parallelism: p,
                    converged: true,
                    best_gamma: Some(t.best_gamma),
                    t_mean: Some(t.best_mean_grad_evals),
                    t_sd: Some(sample_sd(&t.best_per_seed_grad_evals, t.best_mean_grad_evals)),
                    model_updates_mean: Some(t.best_mean_model_updates),
                    normalized_parallel_time: normalized,
                    best_at_endpoint: t.best_at_endpoint,
                }
            }
            Err(_) => SweepRow {
                parallelism: p,
                converged: false,
                best_gamma: None,
                t_mean: None,
                t_sd: None,
                model_updates_mean: None,
                normalized_parallel_time: None,
                best_at_endpoint: false,
            },
        })
        .collect();

    Ok(SpeedupTable { kind: template.schedule.kind, seed_count: opts.seeds, rows })
}

/// One point of a paired drift trajectory: seed-averaged `||x_t - ghost_t||^2`
/// against the two bounds evaluated on the seed-averaged gradient-norm
/// history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtPoint {
    pub step: u64,
    pub mean_deviation: f64,
    pub theta_smj: f64,
    pub theta_sk: f64,
}

/// Runs `seeds` exact-delay trajectories for `horizon` steps and pairs the
/// seed-averaged drift with the simplified bounds. Refuses stepsizes above
/// critical, where the simplified bound's precondition fails.
pub fn rt_trajectory(config: &RunConfig, seeds: u32, horizon: u64) -> Result<Vec<RtPoint>> {
    if config.schedule.kind != ScheduleKind::ExactDelay {
        return Err(Error::invalid("schedule", "drift trajectories require the exact-delay schedule"));
    }
    let (m, sigma2) = oracle_property_params(&config.problem, &config.oracle);
    let l = config.problem.smoothness();
    let tau = config.schedule.parallelism;
    let gamma = config.schedule.effective_lr;
    let gamma_crit = theory::critical_stepsize(l, m, tau as f64)?;
    if gamma > gamma_crit {
        return Err(Error::StepsizeAboveCritical { gamma, gamma_crit });
    }

    let results: Vec<RunResult> = (0..seeds)
        .into_par_iter()
        .map(|si| {
            let mut cfg = config.clone();
            cfg.record = RecordSpec {
                grad_norm2_every: Some(1),
                ghost_every: Some(1),
                checkpoint_every_updates: None,
            };
            cfg.seed = seedstream::subseed(config.seed, &[&format!("rt/s={si}")]);
            run_fixed(&cfg, horizon)
        })
        .collect::<Result<_>>()?;

    for r in &results {
        if r.diverged {
            return Err(Error::invalid("rt run", "diverged below the critical stepsize"));
        }
    }

    let steps = results[0].grad_norm2_series.len();
    let mut mean_norm = vec![0.0; steps];
    let mut mean_dev = vec![0.0; steps];
    for r in &results {
        for (i, (_, v)) in r.grad_norm2_series.iter().enumerate() {
            mean_norm[i] += v / seeds as f64;
        }
        for (i, (_, v)) in r.ghost_series.iter().enumerate() {
            mean_dev[i] += v / seeds as f64;
        }
    }

    let mut points = Vec::with_capacity(steps);
    for t in 0..steps {
        let lo = t.saturating_sub(tau as usize);
        let window = &mean_norm[lo..t];
        let smj = theory::rt_bound_smj(window, l, m, tau, gamma, sigma2)?;
        let sk = theory::rt_bound_sk(window, l, tau, gamma, sigma2)?;
        points.push(RtPoint {
            step: t as u64,
            mean_deviation: mean_dev[t],
            theta_smj: smj.simplified.expect("stepsize checked against critical"),
            theta_sk: sk,
        });
    }
    Ok(points)
}

/// Ground-truth Property-1 parameters `(M, sigma^2)` realized by an oracle on
/// a problem, mask composition included.
pub fn oracle_property_params(problem: &Problem, oracle: &Oracle) -> (f64, f64) {
    match oracle {
        Oracle::Gaussian(noise) => match noise.mask_alpha {
            // Masking multiplies second moments by alpha and adds the
            // (alpha - 1) masking variance of the signal itself.
            Some(alpha) => (alpha - 1.0 + alpha * noise.m, alpha * noise.sigma2),
            None => (noise.m, noise.sigma2),
        },
        Oracle::BlockSparse { mask_alpha } => {
            let b = match problem {
                Problem::BlockSeparable(spec) => spec.blocks as f64,
                Problem::Band(_) => 1.0,
            };
            let base_m = b - 1.0;
            match mask_alpha {
                Some(alpha) => (alpha - 1.0 + alpha * base_m, 0.0),
                None => (base_m, 0.0),
            }
        }
    }
}
