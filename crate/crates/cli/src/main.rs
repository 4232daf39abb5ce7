//! `dfda`: data generation, training, evaluation and diagnostics.
//!
//! Machine-readable results go to stdout (or the named output files);
//! progress and errors go to stderr. Exit codes: 0 success, 1 runtime
//! failure, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dfda", version, about = "Discriminator-free domain adaptation for multi-label classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Em,
    Deepem,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded source/target dataset pair as CSV.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_src: PathBuf,
        #[arg(long)]
        out_tgt: PathBuf,
        /// Also write the held-out labelled target rows.
        #[arg(long)]
        out_test: Option<PathBuf>,
    },
    /// Train on a labelled source CSV and an unlabelled target CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long)]
        out_model: PathBuf,
        /// Per-epoch JSON lines.
        #[arg(long)]
        log: PathBuf,
    },
    /// Print the seven multi-label metrics as JSON.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
    },
    /// Fit a two-component mixture to a column of values and print it as JSON.
    FitGmm {
        /// CSV of numbers; every field is read, an optional header is skipped.
        #[arg(long)]
        values: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Closed-form M-step with the pre-update means (EM only).
        #[arg(long)]
        legacy_mstep: bool,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        rel_tol: f64,
        /// Start the E-block from this trained model (DeepEM only).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Consistency pre-training steps for the E-block (DeepEM only).
        #[arg(long, default_value_t = 200)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time iterative EM against DeepEM; prints a CSV table.
    BenchEm {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        batches: usize,
        #[arg(long, default_value_t = 1e-6)]
        rel_tol: f64,
    },
    /// Write a 50-bin histogram of all prediction scores as CSV.
    Hist {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train once per alpha_1 in `start:stop:step` (alpha_2 = 1 - alpha_1)
    /// and print target mAP per setting as CSV.
    SweepAlpha {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(commands::CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
