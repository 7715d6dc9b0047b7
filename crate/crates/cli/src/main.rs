mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::commands::Context;
use crate::config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] robusthedge_core::error::Error),
}

const EXIT_FAILED_CHECK: u8 = 1;
const EXIT_ERROR: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "robusthedge", version, about = "Robust superhedging on finite scenario trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use exact rational arithmetic.
    #[arg(long)]
    exact: bool,
    /// Overrides the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the configured one, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides ROBUSTHEDGE_THREADS.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dual value, path-space LP and primal LP of one instance.
    Solve(Common),
    /// Dual value against the path-space LP over seeded random instances.
    Oracle(Common),
    /// Superhedging strategy of one instance with per-path slacks.
    Hedge(Common),
    /// Divergence table and truncation sweep of the Gaussian-band example.
    Counterexample(Common),
    /// Randomized property suites.
    Proptest {
        #[command(flatten)]
        common: Common,
        /// Shift one kernel's mean by 0.1 in the membership suite (negative control).
        #[arg(long)]
        mutate_kernel: bool,
    },
}

fn threads(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        return Ok(n.max(1));
    }
    match std::env::var("ROBUSTHEDGE_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(|n| n.max(1))
            .map_err(|_| CliError::Config(format!("ROBUSTHEDGE_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn context(common: &Common, mutate_kernel: bool) -> Result<Context, CliError> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.mutate_kernel |= mutate_kernel;
    let out = common
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads(common.threads)?)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    Ok(Context {
        config,
        exact: common.exact,
        out,
        pool,
    })
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Solve(c) => {
            let (r, ok) = commands::run_solve(&context(&c, false)?)?;
            println!(
                "dp {} lp {} primal {} gap_lp {} gap_primal {} ok {ok}",
                r.dp,
                r.lp.map_or("skipped".into(), |v| v.to_string()),
                r.primal.map_or("skipped".into(), |v| v.to_string()),
                r.gap_lp.map_or("-".into(), |g| g.to_string()),
                r.gap_primal.map_or("-".into(), |g| g.to_string()),
            );
            Ok(ok)
        }
        Command::Oracle(c) => {
            let (rows, ok) = commands::run_oracle(&context(&c, false)?)?;
            let bad = rows.iter().filter(|r| !r.ok).count();
            println!("oracle: {} instances, {bad} failing", rows.len());
            Ok(ok)
        }
        Command::Hedge(c) => {
            let (r, ok) = commands::run_hedge(&context(&c, false)?)?;
            println!(
                "X0 {} min_slack {} polar_paths {} ok {ok}",
                r.x0.map_or("-".into(), |v| v.to_string()),
                r.verification.min_slack.map_or("-".into(), |v| v.to_string()),
                r.verification.polar_paths.len()
            );
            Ok(ok)
        }
        Command::Counterexample(c) => {
            let (s, ok) = commands::run_counterexample(&context(&c, false)?)?;
            println!(
                "bands {} min f_i {} partial sum {} E|Z| {}",
                s.bands, s.min_f, s.partial_sum, s.gaussian_abs_mean_0
            );
            Ok(ok)
        }
        Command::Proptest { common, mutate_kernel } => {
            let (r, ok) = commands::run_proptest(&context(&common, mutate_kernel)?)?;
            println!("base seed {}", r.base_seed);
            for s in &r.suites {
                println!(
                    "{:<24} instances {:>4} passed {:>4} skipped {:>4} failed {:>4}",
                    s.suite.name(),
                    s.instances,
                    s.passed,
                    s.skipped,
                    s.failed
                );
                for f in s.failures.iter().take(5) {
                    let at = f.node.map_or(String::new(), |n| format!(" at node {n}"));
                    println!("  seed {}{at}: {}", f.seed, f.detail);
                }
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILED_CHECK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
