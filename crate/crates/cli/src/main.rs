//! `graphdef`: train, evaluate, and generate test graphs for the
//! network-defense RL toolkit.
//!
//! Exit codes: 0 success, 2 config error, 3 training divergence,
//! 4 incompatible checkpoint, 1 anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "graphdef", version, about = "Graph-based RL for automated network defense")]
struct Cli {
    /// Worker threads for rollouts and evaluation (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file; checkpoints land in --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override any config key, e.g. --set env.n=20
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint under the configured protocols.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Generate a reproducible block of test graphs.
    GenGraphs {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Error carrying its process exit code.
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(err: impl std::fmt::Display) -> Self {
        Self { code: 2, message: format!("config error: {err:#}") }
    }

    pub fn diverged(err: impl std::fmt::Display) -> Self {
        Self { code: 3, message: format!("{err}") }
    }

    pub fn incompatible(err: impl std::fmt::Display) -> Self {
        Self { code: 4, message: format!("incompatible checkpoint: {err}") }
    }

    pub fn other(err: impl std::fmt::Display) -> Self {
        Self { code: 1, message: format!("{err:#}") }
    }
}

fn load_config(path: &PathBuf, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::load(&text, overrides).map_err(CliError::config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(CliError::other)?;
    }
    match cli.command {
        Command::Train { config, out, resume, set } => {
            let cfg = load_config(&config, &set)?;
            commands::train::run(&cfg, &out, resume.as_deref())
        }
        Command::Eval { checkpoint, config, out, set } => {
            let cfg = load_config(&config, &set)?;
            commands::eval::run(&cfg, &checkpoint, &out)
        }
        Command::GenGraphs { n, p, count, seed, out } => {
            commands::gen_graphs::run(n, p, count, seed, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("graphdef: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
