//! `gpslab`: train controllers and policies on the built-in tasks, evaluate
//! saved policies on train/test condition splits, and compare runs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure,
//! 4 incompatible artifacts.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gpslab", version, about = "Trajectory-centric policy search experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training experiment described by a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a policy checkpoint on a condition split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, value_parser = ["train", "test"], default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        conditions: usize,
        /// Success threshold on the final distance to the target.
        #[arg(long, default_value_t = 0.06)]
        threshold: f64,
    },
    /// Align runs by total samples and emit a comparison table.
    Compare {
        /// Run directories produced by `train`.
        dirs: Vec<PathBuf>,
        /// Optional path for the CSV version of the table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;
pub const EXIT_INCOMPATIBLE: u8 = 4;

fn init_threads() {
    if let Ok(value) = std::env::var("GPSLAB_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train { config } => commands::train::run(&config),
        Command::Eval { checkpoint, task, split, trials, seed, conditions, threshold } => {
            commands::eval::run(&checkpoint, &task, &split, trials, seed, conditions, threshold)
        }
        Command::Compare { dirs, out } => commands::compare::run(&dirs, out.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code)
        }
    }
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub exit_code: u8,
    pub message: anyhow::Error,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.message)
    }
}

impl CliError {
    pub fn config(message: anyhow::Error) -> Self {
        Self { exit_code: EXIT_CONFIG, message }
    }
    pub fn runtime(message: anyhow::Error) -> Self {
        Self { exit_code: EXIT_RUNTIME, message }
    }
    pub fn incompatible(message: anyhow::Error) -> Self {
        Self { exit_code: EXIT_INCOMPATIBLE, message }
    }
}

type CliResult = Result<(), CliError>;
