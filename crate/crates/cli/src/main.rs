//! `ste`: train, collapse, verify and analyze networks with STE layers.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 data or
//! checkpoint error, 3 non-finite loss during training, 4 collapse
//! verification failed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ste", version, about = "Stochastically trained ensemble layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its checkpoint, history and metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run (`last.ckpt`).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Loss and top-1 accuracy of a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
        split: String,
    },
    /// Replace every STE layer by its dense equivalent.
    Collapse {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a network against its collapsed form on random inputs.
    Verify {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Collapsed checkpoint to check; collapses in memory when omitted.
        #[arg(long)]
        collapsed: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Trained and collapsed parameter counts of the configured model.
    CountParams {
        #[arg(long)]
        config: PathBuf,
        /// Per-layer counts as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train each configuration once per seed and tabulate mean ± std.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Branch outputs of one STE layer and their correlations.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Index of an STE layer in the network.
        #[arg(long)]
        layer: usize,
        /// CSV of raw feature rows (no label column).
        #[arg(long)]
        inputs: PathBuf,
        /// Normalization statistics written by `train` (`stats.csv`).
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Correlation matrix CSV; branch outputs go to `<stem>.branches.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded synthetic digit dataset as IDX files plus a config.
    GenDigits {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        train: usize,
        #[arg(long, default_value_t = 1000)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// A command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn verification(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }

    /// Wraps a library error, prefixing `context`.
    pub fn from_core(context: &str, err: ste_core::Error) -> Self {
        use ste_core::Error as E;
        let code = match err {
            E::NonFinite { .. } => 3,
            E::InvalidArgument(_) | E::InvalidModel(_) => 1,
            _ => 2,
        };
        let message = if context.is_empty() { err.to_string() } else { format!("{context}: {err}") };
        Self { code, message }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { config, seed, out, resume } => commands::train(&config, seed, &out, resume.as_deref()),
        Command::Evaluate { checkpoint, config, split } => commands::evaluate(&checkpoint, &config, &split),
        Command::Collapse { checkpoint, out } => commands::collapse(&checkpoint, &out),
        Command::Verify { checkpoint, collapsed, trials, tol } => {
            commands::verify(&checkpoint, collapsed.as_deref(), trials, tol)
        }
        Command::CountParams { config, out } => commands::count_params(&config, out.as_deref()),
        Command::Experiment { config, seeds, out } => commands::experiment(&config, seeds, &out),
        Command::Analyze { checkpoint, layer, inputs, stats, out } => {
            commands::analyze(&checkpoint, layer, &inputs, stats.as_deref(), &out)
        }
        Command::GenDigits { out, train, test, seed } => commands::gen_digits(&out, train, test, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
