//! `sgdsim`: parallel-SGD staleness simulation experiments.

mod commands;
mod config;
mod csvout;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "sgdsim",
    about = "Simulates mini-batch, delayed, and coordinate-wise asynchronous SGD on controlled \
             problem instances and verifies the critical-parameter theory numerically",
    version
)]
struct Cli {
    /// Experiment configuration file (line-oriented sections of key = value).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output CSV path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed; every random stream derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Config override, repeatable: --set section.key=value.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One simulation run with the configured stepsize.
    Run,
    /// Tune the stepsize over the logarithmic grid at the configured
    /// parallelism.
    Tune,
    /// Tune every parallelism level in the sweep list and emit the speedup
    /// table.
    Speedup,
    /// Compare seed-averaged staleness drift against its theoretical bounds
    /// (exact-delay schedule).
    RtVerify,
    /// Track the critical-batch-size estimator along a converging run.
    Estimate,
    /// Run the theory verification suite; nonzero exit on any violation.
    VerifyTheory,
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();

    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => String::new(),
    };
    let config = config::parse_config(&text, &cli.sets)?;

    let out_required = || {
        cli.out
            .clone()
            .context("this subcommand requires --out PATH for its CSV")
    };

    let ok = match cli.command {
        Command::Run => {
            commands::cmd_run(&config, cli.seed, &out_required()?)?;
            true
        }
        Command::Tune => {
            commands::cmd_tune(&config, cli.seed, &out_required()?)?;
            true
        }
        Command::Speedup => {
            commands::cmd_speedup(&config, cli.seed, &out_required()?)?;
            true
        }
        Command::RtVerify => commands::cmd_rt_verify(&config, cli.seed, &out_required()?)?,
        Command::Estimate => {
            commands::cmd_estimate(&config, cli.seed, &out_required()?)?;
            true
        }
        Command::VerifyTheory => {
            commands::cmd_verify_theory(&config, cli.seed, cli.out.as_deref())?
        }
    };

    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
