//! `sgnn` — command-line driver for the simulation-grounded learning
//! pipeline.
//!
//! Subcommands cover the dataset utilities (`gen`, `train`, `eval`), the
//! four experiments (`run` plus the single-experiment aliases `attribute`,
//! `sweep`, `select`), and figure export (`export`). Experiments are
//! configured by flat TOML files and write CSV artifacts plus a checksummed
//! JSON manifest into their output directory; reruns with the same config
//! are byte-identical. Progress goes to standard error, data only to files.
//! Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or
//! usage; failures also print a one-line JSON error report to standard
//! error.

mod commands;
mod config;
mod error;
mod export;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ExperimentTag;
use crate::error::{CliError, Result};

#[derive(Parser)]
#[command(
    name = "sgnn",
    version,
    about = "Simulation-grounded learning: dataset synthesis, training, and experiments"
)]
struct Cli {
    /// Cap the worker-thread count for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the config's [gen] section.
    Gen {
        /// Config file with a [gen] section.
        #[arg(long)]
        config: PathBuf,
        /// Output dataset path (binary; a checksum sidecar is written too).
        #[arg(long)]
        out: PathBuf,
        /// Also export the dataset as CSV to this path.
        #[arg(long, value_name = "PATH")]
        export_csv: Option<PathBuf>,
    },
    /// Train a network on a generated dataset and save a checkpoint.
    Train {
        /// Config file whose [train] section sets the hyperparameters.
        #[arg(long)]
        config: PathBuf,
        /// Dataset produced by `gen`.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset and write metric,value rows.
    Eval {
        /// Checkpoint produced by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Dataset produced by `gen`.
        #[arg(long)]
        data: PathBuf,
        /// Metrics CSV output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle-convergence / bound / attribution / selection
    /// experiment named by the config's experiment.tag.
    Run {
        /// Config file with an [experiment] section.
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the back-to-simulation attribution experiment.
    Attribute {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the dynamics-mismatch bound sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the classifier-versus-AIC model-selection experiment.
    Select {
        #[arg(long)]
        config: PathBuf,
    },
    /// Export the tidy per-figure CSV from a completed run directory.
    Export {
        /// Run directory containing manifest.json.
        #[arg(long)]
        run: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Config("--threads must be ≥ 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("cannot configure thread pool: {e}")))?;
    }
    match cli.command {
        Command::Gen { config, out, export_csv } => {
            commands::cmd_gen(&config, &out, export_csv.as_deref())
        }
        Command::Train { config, data, out } => commands::cmd_train(&config, &data, &out),
        Command::Eval { model, data, out } => commands::cmd_eval(&model, &data, &out),
        Command::Run { config } => commands::cmd_run(&config, None),
        Command::Attribute { config } => {
            commands::cmd_run(&config, Some(ExperimentTag::Attribution))
        }
        Command::Sweep { config } => {
            commands::cmd_run(&config, Some(ExperimentTag::MismatchSweep))
        }
        Command::Select { config } => {
            commands::cmd_run(&config, Some(ExperimentTag::ModelSelection))
        }
        Command::Export { run } => export::cmd_export(&run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.report());
            ExitCode::from(err.exit_code())
        }
    }
}
