//! Line-oriented experiment configuration.
//!
//! The format is sections of `key = value` pairs:
//!
//! ```text
//! # comment
//! [problem]
//! d = 20
//! lambda = 0.2
//!
//! [noise]
//! M = 10
//! ```
//!
//! Every key has a default mirroring the synthetic-experiment setup (band
//! quadratic with `d = 20`, `lambda = 0.2`, start at `10 * ones`, stop at
//! `(1/d)||x|| <= 0.1`, three seeds, twenty-point stepsize grid), so the
//! empty config is runnable as-is. Unknown sections or keys are rejected
//! with their line number. Command-line overrides use dotted paths
//! (`--set noise.M=10`) and are applied after the file, before validation.

use std::fmt;

use sgdsim::harness::{RecordSpec, RunConfig, StopRule, TuneOptions, X0};
use sgdsim::oracles::{NoiseSpec, Oracle};
use sgdsim::problems::{BlockSeparableSpec, Problem, QuadraticBandSpec};
use sgdsim::schedulers::{ScheduleKind, ScheduleSpec};

#[derive(Debug, thiserror::Error)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error")?;
        if let Some(line) = self.line {
            write!(f, " at line {line}")?;
        }
        if let Some(field) = &self.field {
            write!(f, " in `{field}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl ConfigError {
    fn field(line: Option<usize>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { line, field: Some(field.into()), message: message.into() }
    }

    fn syntax(line: usize, message: impl Into<String>) -> Self {
        Self { line: Some(line), field: None, message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Band,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Gaussian,
    BlockSparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopKind {
    IterateNorm,
    GradNorm2,
}

/// Test hook: deliberately corrupts one verification target so the
/// `verify-theory` failure path can be exercised end to end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Halves the block-oracle noise variance fed to the tightness check.
    BlockVarianceHalf,
}

/// Fully resolved and validated experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub problem_kind: ProblemKind,
    pub dim: usize,
    pub lambda: f64,
    pub blocks: usize,

    pub oracle_kind: OracleKind,
    pub m: f64,
    pub sigma2: f64,
    pub mask_alpha: Option<f64>,

    pub schedule_kind: ScheduleKind,
    pub parallelism: u64,
    /// Per-gradient stepsize for `run`; `None` resolves to a converging
    /// default below the grid top.
    pub gamma: Option<f64>,

    pub stop_kind: StopKind,
    pub threshold: f64,
    pub eps: f64,

    pub x0_fill: f64,
    pub max_updates: u64,
    pub seeds: u32,

    pub grid_points: u32,
    pub eval_budget: u64,
    pub cutoff_factor: f64,

    pub parallelism_list: Vec<u64>,

    pub rt_horizon: u64,
    pub rt_seeds: u32,

    pub checkpoints: u64,
    pub samples: usize,

    pub fault: Fault,
}

impl Default for ResolvedConfig {
    fn default() -> Self {
        Self {
            problem_kind: ProblemKind::Band,
            dim: 20,
            lambda: 0.2,
            blocks: 4,
            oracle_kind: OracleKind::Gaussian,
            m: 0.0,
            sigma2: 0.0,
            mask_alpha: None,
            schedule_kind: ScheduleKind::MiniBatch,
            parallelism: 1,
            gamma: None,
            stop_kind: StopKind::IterateNorm,
            threshold: 0.1,
            eps: 0.01,
            x0_fill: 10.0,
            max_updates: 1_000_000,
            seeds: 3,
            grid_points: 20,
            eval_budget: 1_000_000,
            cutoff_factor: 4.0,
            parallelism_list: (0..=10).map(|k| 1u64 << k).collect(),
            rt_horizon: 1200,
            rt_seeds: 20,
            checkpoints: 100,
            samples: 10_000,
            fault: Fault::None,
        }
    }
}

fn parse_f64(line: Option<usize>, field: &str, value: &str) -> Result<f64, ConfigError> {
    value
        .parse::<f64>()
        .map_err(|_| ConfigError::field(line, field, format!("expected a real number, got `{value}`")))
}

fn parse_u64(line: Option<usize>, field: &str, value: &str) -> Result<u64, ConfigError> {
    value
        .parse::<u64>()
        .map_err(|_| ConfigError::field(line, field, format!("expected a nonnegative integer, got `{value}`")))
}

fn parse_u64_list(line: Option<usize>, field: &str, value: &str) -> Result<Vec<u64>, ConfigError> {
    value
        .split(',')
        .map(|part| parse_u64(line, field, part.trim()))
        .collect()
}

impl ResolvedConfig {
    fn apply(
        &mut self,
        line: Option<usize>,
        section: &str,
        key: &str,
        value: &str,
    ) -> Result<(), ConfigError> {
        let field = format!("{section}.{key}");
        match (section, key) {
            ("problem", "kind") => {
                self.problem_kind = match value {
                    "band" => ProblemKind::Band,
                    "block" => ProblemKind::Block,
                    other => {
                        return Err(ConfigError::field(
                            line,
                            field,
                            format!("unknown problem kind `{other}` (expected band|block)"),
                        ))
                    }
                }
            }
            ("problem", "d") => self.dim = parse_u64(line, &field, value)? as usize,
            ("problem", "lambda") => self.lambda = parse_f64(line, &field, value)?,
            ("problem", "blocks") => self.blocks = parse_u64(line, &field, value)? as usize,

            ("noise", "oracle") => {
                self.oracle_kind = match value {
                    "gaussian" => OracleKind::Gaussian,
                    "block-sparse" => OracleKind::BlockSparse,
                    other => {
                        return Err(ConfigError::field(
                            line,
                            field,
                            format!("unknown oracle `{other}` (expected gaussian|block-sparse)"),
                        ))
                    }
                }
            }
            ("noise", "M") => self.m = parse_f64(line, &field, value)?,
            ("noise", "sigma2") => self.sigma2 = parse_f64(line, &field, value)?,
            ("noise", "mask_alpha") => {
                self.mask_alpha = match value {
                    "none" => None,
                    other => Some(parse_f64(line, &field, other)?),
                }
            }

            ("schedule", "kind") => {
                self.schedule_kind = match value {
                    "minibatch" => ScheduleKind::MiniBatch,
                    "exact-delay" => ScheduleKind::ExactDelay,
                    "random-delay" => ScheduleKind::RandomCoordinateDelay,
                    other => {
                        return Err(ConfigError::field(
                            line,
                            field,
                            format!(
                                "unknown schedule kind `{other}` (expected minibatch|exact-delay|random-delay)"
                            ),
                        ))
                    }
                }
            }
            ("schedule", "parallelism") => self.parallelism = parse_u64(line, &field, value)?,
            ("schedule", "gamma") => {
                self.gamma = match value {
                    "auto" => None,
                    other => Some(parse_f64(line, &field, other)?),
                }
            }

            ("stop", "kind") => {
                self.stop_kind = match value {
                    "iterate-norm" => StopKind::IterateNorm,
                    "grad-norm2" => StopKind::GradNorm2,
                    other => {
                        return Err(ConfigError::field(
                            line,
                            field,
                            format!("unknown stop kind `{other}` (expected iterate-norm|grad-norm2)"),
                        ))
                    }
                }
            }
            ("stop", "threshold") => self.threshold = parse_f64(line, &field, value)?,
            ("stop", "eps") => self.eps = parse_f64(line, &field, value)?,

            ("run", "x0") => self.x0_fill = parse_f64(line, &field, value)?,
            ("run", "max_updates") => self.max_updates = parse_u64(line, &field, value)?,
            ("run", "seeds") => self.seeds = parse_u64(line, &field, value)? as u32,

            ("tuning", "grid_points") => self.grid_points = parse_u64(line, &field, value)? as u32,
            ("tuning", "eval_budget") => self.eval_budget = parse_u64(line, &field, value)?,
            ("tuning", "cutoff_factor") => self.cutoff_factor = parse_f64(line, &field, value)?,

            ("sweep", "parallelism_list") => {
                self.parallelism_list = parse_u64_list(line, &field, value)?
            }

            ("rt", "horizon") => self.rt_horizon = parse_u64(line, &field, value)?,
            ("rt", "seeds") => self.rt_seeds = parse_u64(line, &field, value)? as u32,

            ("estimate", "checkpoints") => self.checkpoints = parse_u64(line, &field, value)?,
            ("estimate", "samples") => self.samples = parse_u64(line, &field, value)? as usize,

            ("debug", "fault") => {
                self.fault = match value {
                    "none" => Fault::None,
                    "block-variance-half" => Fault::BlockVarianceHalf,
                    other => {
                        return Err(ConfigError::field(
                            line,
                            field,
                            format!("unknown fault `{other}` (expected none|block-variance-half)"),
                        ))
                    }
                }
            }

            _ => {
                return Err(ConfigError::field(
                    line,
                    field.clone(),
                    format!("unknown key `{field}`"),
                ))
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let err = |field: &str, msg: String| Err(ConfigError::field(None, field, msg));
        if self.dim < 2 {
            return err("problem.d", format!("must be >= 2, got {}", self.dim));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return err("problem.lambda", format!("must be >= 0, got {}", self.lambda));
        }
        if self.blocks < 1 {
            return err("problem.blocks", "must be >= 1".into());
        }
        if !self.m.is_finite() || self.m < 0.0 {
            return err("noise.M", format!("must be >= 0, got {}", self.m));
        }
        if !self.sigma2.is_finite() || self.sigma2 < 0.0 {
            return err("noise.sigma2", format!("must be >= 0, got {}", self.sigma2));
        }
        if let Some(a) = self.mask_alpha {
            if !a.is_finite() || a < 1.0 {
                return err("noise.mask_alpha", format!("must be >= 1, got {a}"));
            }
        }
        if self.oracle_kind == OracleKind::BlockSparse && self.problem_kind != ProblemKind::Block {
            return err("noise.oracle", "block-sparse oracle requires problem.kind = block".into());
        }
        if self.parallelism < 1 {
            return err("schedule.parallelism", "must be >= 1".into());
        }
        if let Some(g) = self.gamma {
            if !g.is_finite() || g <= 0.0 {
                return err("schedule.gamma", format!("must be > 0, got {g}"));
            }
        }
        if !self.threshold.is_finite() || self.threshold <= 0.0 {
            return err("stop.threshold", format!("must be > 0, got {}", self.threshold));
        }
        if !self.eps.is_finite() || self.eps <= 0.0 {
            return err("stop.eps", format!("must be > 0, got {}", self.eps));
        }
        if self.max_updates < 1 {
            return err("run.max_updates", "must be >= 1".into());
        }
        if self.seeds < 1 {
            return err("run.seeds", "must be >= 1".into());
        }
        if self.grid_points < 1 {
            return err("tuning.grid_points", "must be >= 1".into());
        }
        if !self.cutoff_factor.is_finite() || self.cutoff_factor < 1.0 {
            return err("tuning.cutoff_factor", format!("must be >= 1, got {}", self.cutoff_factor));
        }
        if self.parallelism_list.is_empty() {
            return err("sweep.parallelism_list", "must be nonempty".into());
        }
        if self.rt_seeds < 1 || self.rt_horizon < 1 {
            return err("rt.seeds", "rt seeds and horizon must be >= 1".into());
        }
        if self.checkpoints < 10 {
            return err("estimate.checkpoints", "must be >= 10".into());
        }
        if self.samples < 2 {
            return err("estimate.samples", "must be >= 2".into());
        }
        Ok(())
    }

    /// Effective per-gradient stepsize for single runs: the explicit value,
    /// or a converging default two notches below the grid top.
    pub fn effective_gamma(&self) -> f64 {
        self.gamma.unwrap_or(1.1 / (1.0 + self.m) * 0.25)
    }

    pub fn problem(&self) -> anyhow::Result<Problem> {
        Ok(match self.problem_kind {
            ProblemKind::Band => Problem::Band(QuadraticBandSpec::new(self.dim, self.lambda)?),
            ProblemKind::Block => Problem::BlockSeparable(BlockSeparableSpec::new(
                QuadraticBandSpec::new(self.dim, self.lambda)?,
                self.blocks,
            )?),
        })
    }

    pub fn oracle(&self) -> anyhow::Result<Oracle> {
        Ok(match self.oracle_kind {
            OracleKind::Gaussian => {
                Oracle::Gaussian(NoiseSpec::new(self.m, self.sigma2, self.mask_alpha)?)
            }
            OracleKind::BlockSparse => Oracle::BlockSparse { mask_alpha: self.mask_alpha },
        })
    }

    pub fn stop(&self) -> StopRule {
        match self.stop_kind {
            StopKind::IterateNorm => StopRule::IterateNorm { threshold: self.threshold },
            StopKind::GradNorm2 => StopRule::GradNorm2 { eps: self.eps },
        }
    }

    /// A run configuration template; `seed` is the master seed and the
    /// schedule carries the single-run stepsize.
    pub fn run_config(&self, seed: u64) -> anyhow::Result<RunConfig> {
        Ok(RunConfig {
            problem: self.problem()?,
            oracle: self.oracle()?,
            schedule: ScheduleSpec::new(self.schedule_kind, self.parallelism, self.effective_gamma())?,
            stop: self.stop(),
            x0: X0::Fill(self.x0_fill),
            max_updates: self.max_updates,
            seed,
            record: RecordSpec::default(),
        })
    }

    pub fn tune_options(&self) -> TuneOptions {
        TuneOptions {
            seeds: self.seeds,
            grid_points: self.grid_points,
            eval_budget: self.eval_budget,
            cutoff_factor: self.cutoff_factor,
        }
    }
}

/// Parses a config file body into a validated configuration, applying dotted
/// `section.key=value` overrides after the file.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ResolvedConfig, ConfigError> {
    let mut config = ResolvedConfig::default();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::syntax(line_no, "unterminated section header"))?
                .trim();
            if !KNOWN_SECTIONS.contains(&name) {
                return Err(ConfigError::syntax(line_no, format!("unknown section `[{name}]`")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ConfigError::syntax(line_no, format!("expected `key = value`, got `{line}`"))
        })?;
        let section = section.as_deref().ok_or_else(|| {
            ConfigError::syntax(line_no, "key outside of any [section]")
        })?;
        config.apply(Some(line_no), section, key.trim(), value.trim())?;
    }

    for entry in overrides {
        let (path, value) = entry.split_once('=').ok_or_else(|| ConfigError {
            line: None,
            field: Some(entry.clone()),
            message: "override must look like section.key=value".into(),
        })?;
        let (section, key) = path.trim().split_once('.').ok_or_else(|| ConfigError {
            line: None,
            field: Some(path.to_string()),
            message: "override key must be section.key".into(),
        })?;
        config.apply(None, section, key, value.trim())?;
    }

    config.validate()?;
    Ok(config)
}

const KNOWN_SECTIONS: &[&str] =
    &["problem", "noise", "schedule", "stop", "run", "tuning", "sweep", "rt", "estimate", "debug"];
