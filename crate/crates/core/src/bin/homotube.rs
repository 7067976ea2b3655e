use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use homotube::experiment::{self, ExperimentConfig, Mode};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "homotube", version, about = "Learning-based homothetic tube MPC experiments")]
struct Cli {
    /// Experiment configuration (JSON). The default platooning instance when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for scans and Monte Carlo batches.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = ModeArg::Homothetic)]
    mode: ModeArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Homothetic,
    Rigid,
    Conventional,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Homothetic => Mode::Homothetic,
            ModeArg::Rigid => Mode::Rigid,
            ModeArg::Conventional => Mode::Conventional,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit the initial learned disturbance set and report the sample bound.
    Fit,
    /// Compute the invariant tube cross-section and verify it.
    Invariant,
    /// Compute the constraint horizon with its tail check.
    Horizon,
    /// Run one closed loop and write its trace.
    Simulate,
    /// Scan the initial feasible regions of the three controllers.
    Region,
    /// Feasibility rate over seeded runs from a boundary state.
    Montecarlo,
    /// Run the three controllers from the same state and seed.
    Compare,
    /// fit, invariant, horizon, region and montecarlo in sequence.
    Repro,
    /// Print the default configuration.
    DefaultConfig,
}

fn emit<T: Serialize>(report: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(report)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    let out = cfg.out_dir.clone();
    let mode = Mode::from(cli.mode);
    let passed = match cli.command {
        Command::Fit => {
            let r = experiment::cmd_fit(&cfg, mode, &out)?;
            emit(&r)?;
            r.passed
        }
        Command::Invariant => {
            let r = experiment::cmd_invariant(&cfg, &out)?;
            emit(&r)?;
            r.passed
        }
        Command::Horizon => {
            let r = experiment::cmd_horizon(&cfg, mode, &out)?;
            emit(&r)?;
            r.passed
        }
        Command::Simulate => {
            let (r, _) = experiment::cmd_simulate(&cfg, mode, &out)?;
            emit(&r)?;
            r.passed
        }
        Command::Region => {
            let (r, _) = experiment::cmd_region(&cfg, &out)?;
            emit(&r)?;
            r.passed
        }
        Command::Montecarlo => {
            let r = experiment::cmd_montecarlo(&cfg, mode, &out)?;
            emit(&r)?;
            r.rate == 1.0
        }
        Command::Compare => {
            let (rows, _) = experiment::cmd_compare(&cfg, &out)?;
            emit(&rows)?;
            rows.iter().all(|r| r.max_constraint_excess.is_finite())
        }
        Command::Repro => {
            let r = experiment::cmd_repro(&cfg, mode, &out)?;
            emit(&r)?;
            r.passed
        }
        Command::DefaultConfig => {
            println!("{}", ExperimentConfig::default().to_json());
            true
        }
    };
    Ok(passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --jobs: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
