//! Subcommand implementations: each builds domain objects from the resolved
//! config, drives the simulation library, and emits a deterministic CSV.

use std::path::Path;

use anyhow::{bail, Context};
use rand::Rng;

use sgdsim::estimators::{self, TrackOptions};
use sgdsim::harness::{self, oracle_property_params, RunConfig};
use sgdsim::oracles::{sample_block_sparse_gradient, GradientSample};
use sgdsim::problems::{BlockSeparableSpec, Problem, QuadraticBandSpec};
use sgdsim::schedulers::ScheduleSpec;
use sgdsim::seedstream;
use sgdsim::theory;

use crate::config::{Fault, ResolvedConfig};
use crate::csvout::{Field, Table};

/// Grid base `M`: the Property-1 relative-noise factor actually realized by
/// the configured oracle (so block oracles tune over their induced noise
/// scale, not the Gaussian knob).
fn grid_m(config: &ResolvedConfig) -> anyhow::Result<f64> {
    Ok(oracle_property_params(&config.problem()?, &config.oracle()?).0)
}

fn scaled_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt() / x.len() as f64
}

pub fn cmd_run(config: &ResolvedConfig, seed: u64, out: &Path) -> anyhow::Result<()> {
    let run_config = config.run_config(seed)?;
    let result = harness::run(&run_config)?;

    let mut table = Table::new(vec![
        "algorithm",
        "M",
        "sigma2",
        "parallelism",
        "gamma",
        "seed",
        "converged",
        "diverged",
        "grad_evals",
        "model_updates",
        "final_scaled_norm",
    ]);
    table.push(vec![
        Field::Str(config.schedule_kind.name().into()),
        Field::Real(config.m),
        Field::Real(config.sigma2),
        Field::Uint(config.parallelism),
        Field::Real(run_config.schedule.effective_lr),
        Field::Uint(seed),
        Field::Bool(result.converged),
        Field::Bool(result.diverged),
        Field::Uint(result.grad_evals),
        Field::Uint(result.model_updates),
        Field::Real(scaled_norm(&result.final_x)),
    ]);
    table.save(out).with_context(|| format!("writing {}", out.display()))?;

    println!(
        "run: {} converged={} diverged={} grad_evals={} model_updates={}",
        config.schedule_kind.name(),
        result.converged,
        result.diverged,
        result.grad_evals,
        result.model_updates
    );
    Ok(())
}

pub fn cmd_tune(config: &ResolvedConfig, seed: u64, out: &Path) -> anyhow::Result<()> {
    let template = config.run_config(seed)?;
    let m = grid_m(config)?;
    let tuned = harness::tune_stepsize(&template, m, &config.tune_options())?;

    let mut table = Table::new(vec![
        "algorithm",
        "M",
        "sigma2",
        "parallelism",
        "gamma",
        "mean_grad_evals",
        "mean_model_updates",
        "converged_fraction",
        "is_best",
    ]);
    for point in &tuned.grid {
        table.push(vec![
            Field::Str(config.schedule_kind.name().into()),
            Field::Real(config.m),
            Field::Real(config.sigma2),
            Field::Uint(config.parallelism),
            Field::Real(point.gamma),
            Field::Real(point.mean_grad_evals),
            Field::Real(point.mean_model_updates),
            Field::Real(point.converged_fraction),
            Field::Bool(point.gamma == tuned.best_gamma),
        ]);
    }
    table.save(out).with_context(|| format!("writing {}", out.display()))?;

    println!(
        "tune: best gamma = {:.6e} (mean grad evals {:.1}){}",
        tuned.best_gamma,
        tuned.best_mean_grad_evals,
        if tuned.best_at_endpoint { " [warning: optimum at grid endpoint]" } else { "" }
    );
    Ok(())
}

/// The speedup CSV schema is fixed: 11 columns, parallelism-1 row first in
/// list order, reference-normalized parallel time in the last column.
pub fn cmd_speedup(config: &ResolvedConfig, seed: u64, out: &Path) -> anyhow::Result<()> {
    let template = config.run_config(seed)?;
    let m = grid_m(config)?;
    let table_data =
        harness::speedup_sweep(&template, m, &config.parallelism_list, &config.tune_options())?;

    let mut table = Table::new(vec![
        "algorithm",
        "M",
        "sigma2",
        "parallelism",
        "gamma",
        "seed_count",
        "grad_evals_mean",
        "grad_evals_sd",
        "model_updates_mean",
        "converged",
        "normalized_parallel_time",
    ]);
    for row in &table_data.rows {
        table.push(vec![
            Field::Str(config.schedule_kind.name().into()),
            Field::Real(config.m),
            Field::Real(config.sigma2),
            Field::Uint(row.parallelism),
            Field::Real(row.best_gamma.unwrap_or(f64::NAN)),
            Field::Uint(table_data.seed_count as u64),
            Field::Real(row.t_mean.unwrap_or(f64::NAN)),
            Field::Real(row.t_sd.unwrap_or(f64::NAN)),
            Field::Real(row.model_updates_mean.unwrap_or(f64::NAN)),
            Field::Bool(row.converged),
            Field::Real(row.normalized_parallel_time.unwrap_or(f64::NAN)),
        ]);
    }
    table.save(out).with_context(|| format!("writing {}", out.display()))?;

    for row in &table_data.rows {
        println!(
            "speedup: p={} normalized_time={}",
            row.parallelism,
            row.normalized_parallel_time
                .map_or("n/a".into(), |v| format!("{v:.4}"))
        );
    }
    Ok(())
}

pub fn cmd_rt_verify(config: &ResolvedConfig, seed: u64, out: &Path) -> anyhow::Result<bool> {
    if config.schedule_kind != sgdsim::schedulers::ScheduleKind::ExactDelay {
        bail!("rt-verify requires schedule.kind = exact-delay");
    }
    let problem = config.problem()?;
    let l = problem.smoothness();
    let (m, _) = oracle_property_params(&problem, &config.oracle()?);
    // Default to half the critical stepsize when no gamma was given.
    let gamma = match config.gamma {
        Some(g) => g,
        None => theory::critical_stepsize(l, m, config.parallelism as f64)? / 2.0,
    };
    let mut run_config = config.run_config(seed)?;
    run_config.schedule = ScheduleSpec::new(config.schedule_kind, config.parallelism, gamma)?;

    let points = harness::rt_trajectory(&run_config, config.rt_seeds, config.rt_horizon)?;

    let mut table = Table::new(vec!["step", "mean_deviation", "theta_smj", "theta_sk", "dominated"]);
    let mut all_dominated = true;
    let mut ordered = true;
    for p in &points {
        let dominated = p.mean_deviation <= 1.1 * p.theta_smj + 1e-18;
        all_dominated &= dominated;
        ordered &= p.theta_smj <= p.theta_sk * (1.0 + 1e-12);
        table.push(vec![
            Field::Uint(p.step),
            Field::Real(p.mean_deviation),
            Field::Real(p.theta_smj),
            Field::Real(p.theta_sk),
            Field::Bool(dominated),
        ]);
    }
    table.save(out).with_context(|| format!("writing {}", out.display()))?;

    let pass = all_dominated && ordered;
    println!(
        "rt-verify: tau={} gamma={:.6e} seeds={} steps={} dominance={} smj<=sk={}",
        config.parallelism,
        gamma,
        config.rt_seeds,
        points.len(),
        if all_dominated { "PASS" } else { "FAIL" },
        if ordered { "PASS" } else { "FAIL" },
    );
    Ok(pass)
}

pub fn cmd_estimate(config: &ResolvedConfig, seed: u64, out: &Path) -> anyhow::Result<()> {
    let run_config = config.run_config(seed)?;
    let opts = TrackOptions { checkpoints: config.checkpoints, samples: config.samples };
    let track = estimators::track_bhat(&run_config, &opts)?;

    let mut table = Table::new(vec!["step", "grad_norm2", "noise_mean2", "bhat"]);
    for r in &track.records {
        table.push(vec![
            Field::Uint(r.step),
            Field::Real(r.grad_norm2),
            Field::Real(r.noise_mean2),
            Field::Real(r.bhat),
        ]);
    }
    table.save(out).with_context(|| format!("writing {}", out.display()))?;

    println!(
        "estimate: checkpoints={} eps_hat={:.6e} bhat_crit={:.4}",
        track.records.len(),
        track.eps_hat,
        track.bhat_crit
    );
    Ok(())
}

/// One named verification check.
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

/// Exact finite-support verification of the sparsity inequality on the
/// equality witness plus a thousand randomized compliant distributions.
fn lemma1_suite(seed: u64) -> Check {
    let mut rng = seedstream::stream(seed, &["verify", "lemma1"]);
    let mut violations = 0usize;
    let mut min_slack = f64::INFINITY;

    let zero = theory::FiniteDistribution::new(vec![(0.0, 1.0)]).unwrap();
    let r = theory::verify_lemma_trick(&zero, 0.0);
    violations += usize::from(!(r.holds && r.precondition_ok));

    let witness = theory::FiniteDistribution::new(vec![(3.0, 0.25), (0.0, 0.75)]).unwrap();
    let r = theory::verify_lemma_trick(&witness, 0.25);
    violations += usize::from(!(r.holds && r.precondition_ok));
    min_slack = min_slack.min(r.slack);

    for _ in 0..1000 {
        let (dist, delta) = theory::random_compliant_distribution(&mut rng);
        let r = theory::verify_lemma_trick(&dist, delta);
        if !(r.holds && r.precondition_ok) {
            violations += 1;
        }
        min_slack = min_slack.min(r.slack);
    }
    check(
        "lemma1-suite",
        violations == 0,
        format!("1002 distributions, {violations} violations, min slack {min_slack:.3e}"),
    )
}

/// The simplified drift bound must stay below the delayed-SGD bound, and the
/// general form must stay below the simplified one at the critical stepsize.
fn theta_dominance(seed: u64) -> Check {
    let mut rng = seedstream::stream(seed, &["verify", "theta"]);
    let mut violations = 0usize;
    for _ in 0..100 {
        let l = rng.random_range(0.5..10.0);
        let m = rng.random_range(0.0..50.0);
        let tau = rng.random_range(1..32u64);
        let sigma2 = rng.random_range(0.0..4.0);
        let history: Vec<f64> = (0..tau).map(|_| rng.random_range(0.0..100.0)).collect();
        let gamma = theory::critical_stepsize(l, m, tau as f64).unwrap();
        let smj = theory::rt_bound_smj(&history, l, m, tau, gamma, sigma2).unwrap();
        let sk = theory::rt_bound_sk(&history, l, tau, gamma, sigma2).unwrap();
        let simplified = smj.simplified.unwrap();
        if simplified > sk * (1.0 + 1e-12) || smj.general > simplified * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    check("theta-dominance", violations == 0, format!("100 random inputs, {violations} violations"))
}

/// Block-oracle relative variance must match `B - 1` within 5% for
/// `B in {2, 8, 32}`. The fault hook halves the injected noise to prove the
/// check can fail.
fn corollary1_tightness(seed: u64, fault: Fault) -> anyhow::Result<Check> {
    let mut rng = seedstream::stream(seed, &["verify", "corollary1"]);
    let mut detail = String::new();
    let mut passed = true;
    for blocks in [2usize, 8, 32] {
        let spec = BlockSeparableSpec::new(QuadraticBandSpec::new(5, 0.1).unwrap(), blocks)?;
        let problem = Problem::BlockSeparable(spec);
        let x: Vec<f64> =
            (0..spec.total_dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let grad = problem.gradient(&x)?;
        let grad_norm2: f64 = grad.iter().map(|v| v * v).sum();

        let n = 100_000;
        let mut mean = 0.0;
        for _ in 0..n {
            let mut g: GradientSample = sample_block_sparse_gradient(&spec, &x, &mut rng)?;
            if fault == Fault::BlockVarianceHalf {
                for (gi, fi) in g.values.iter_mut().zip(&grad) {
                    *gi = fi + (*gi - fi) * std::f64::consts::FRAC_1_SQRT_2;
                }
            }
            mean += g
                .values
                .iter()
                .zip(&grad)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        let ratio = mean / n as f64 / grad_norm2;
        let target = blocks as f64 - 1.0;
        let ok = (ratio - target).abs() <= 0.05 * target;
        passed &= ok;
        detail.push_str(&format!("B={blocks}: ratio {ratio:.3} vs {target} ({}); ", if ok { "ok" } else { "VIOLATION" }));
    }
    Ok(check("corollary1-tightness", passed, detail))
}

/// Measured sparsity fed through the variance floor must stay below the
/// measured relative variance.
fn delta_floor_consistency(seed: u64) -> anyhow::Result<Check> {
    let spec = BlockSeparableSpec::new(QuadraticBandSpec::new(5, 0.1).unwrap(), 8)?;
    let problem = Problem::BlockSeparable(spec);
    let oracle = sgdsim::oracles::Oracle::BlockSparse { mask_alpha: None };
    let mut rng = seedstream::stream(seed, &["verify", "delta-floor"]);
    let points: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..spec.total_dim()).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let delta = sgdsim::oracles::measure_delta(&problem, &oracle, &points, 20_000, &mut rng)?;
    let floor = theory::sparsity_variance_floor(delta)?;
    let est = sgdsim::oracles::measure_noise_params(&problem, &oracle, &points, 1e-9, 50_000, &mut rng)?;
    let ratio = est.m.unwrap_or(0.0);
    let ok = floor <= ratio * 1.05;
    Ok(check(
        "delta-floor-consistency",
        ok,
        format!("delta {delta:.4}, floor {floor:.3}, measured ratio {ratio:.3}"),
    ))
}

/// Tracks the estimator on a short synthetic run with known noise and checks
/// the bracket and the sandwich inequality.
fn sandwich_check(seed: u64) -> anyhow::Result<Check> {
    let m = 10.0;
    let problem = Problem::Band(QuadraticBandSpec::default_instance());
    let config = RunConfig {
        problem,
        oracle: sgdsim::oracles::Oracle::Gaussian(sgdsim::oracles::NoiseSpec::new(m, 0.0, None)?),
        schedule: ScheduleSpec::new(
            sgdsim::schedulers::ScheduleKind::MiniBatch,
            1,
            0.275 / (1.0 + m),
        )?,
        stop: sgdsim::harness::StopRule::IterateNorm { threshold: 0.1 },
        x0: sgdsim::harness::X0::Fill(10.0),
        max_updates: 1_000_000,
        seed,
        record: sgdsim::harness::RecordSpec::default(),
    };
    let track = estimators::track_bhat(&config, &TrackOptions { checkpoints: 25, samples: 4_000 })?;
    let report = estimators::bhat_sandwich_check(&track.records, 0.0, m, track.eps_hat, 0.05)?;
    let bracket_ok = track.bhat_crit >= 1.0 + m / 2.0 && track.bhat_crit <= 1.05 * (1.0 + m);
    Ok(check(
        "sandwich-check",
        report.holds && bracket_ok,
        format!(
            "bhat_crit {:.3} in [{}, {}]: {}; left violations {}, right violations {}",
            track.bhat_crit,
            1.0 + m / 2.0,
            1.05 * (1.0 + m),
            bracket_ok,
            report.left_violations.len(),
            report.right_violations.len()
        ),
    ))
}

/// Runs every verification check, prints one verdict line per check, writes
/// the optional CSV, and reports overall success.
pub fn cmd_verify_theory(
    config: &ResolvedConfig,
    seed: u64,
    out: Option<&Path>,
) -> anyhow::Result<bool> {
    let checks = vec![
        lemma1_suite(seed),
        theta_dominance(seed),
        corollary1_tightness(seed, config.fault)?,
        delta_floor_consistency(seed)?,
        sandwich_check(seed)?,
    ];

    let mut table = Table::new(vec!["check", "passed", "detail"]);
    let mut all = true;
    for c in &checks {
        all &= c.passed;
        println!("check {}: {} — {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
        table.push(vec![
            Field::Str(c.name.into()),
            Field::Bool(c.passed),
            Field::Str(c.detail.replace(',', ";")),
        ]);
    }
    if let Some(path) = out {
        table.save(path).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("verify-theory: {}", if all { "ALL CHECKS PASSED" } else { "VIOLATIONS FOUND" });
    Ok(all)
}
