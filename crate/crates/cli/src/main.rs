//! `rcq`: reaction-center search workflows driven by one JSON config.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rcq_core::agent::TargetMode;
use thiserror::Error;

use config::BaselineMethod;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Prediction file schema version.
pub const PREDICTION_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config, unreadable or malformed inputs.
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

#[derive(Parser, Debug)]
#[command(name = "rcq", about = "Reaction-center identification by Q-learning and beam search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration (JSON); defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sample-parallel steps.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset and a train/val/test split manifest.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the Q-network; writes checkpoints and a training log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory from `gen-data`.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Bootstrapped target variant.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<TargetMode>,
    },
    /// Beam-search predictions for one split.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output prediction file (JSONL).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Score a prediction file against a dataset split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Prediction file (JSONL).
        #[arg(long = "in")]
        input: PathBuf,
        /// Dataset directory from `gen-data`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report file (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Check that a non-pruning beam reproduces exhaustive ranking on random graphs.
    OracleCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Run a comparison baseline on the test split.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        method: Option<BaselineMethod>,
    },
}

fn parse_mode(s: &str) -> Result<TargetMode, String> {
    match s {
        "standard" => Ok(TargetMode::Standard),
        "paper-literal" => Ok(TargetMode::PaperLiteral),
        other => Err(format!("unknown mode `{other}` (expected standard or paper-literal)")),
    }
}

fn version_text() -> String {
    format!(
        "{} (checkpoint format {}, dataset schema {}, prediction schema {})",
        env!("CARGO_PKG_VERSION"),
        rcq_tensor::checkpoint::FORMAT_VERSION,
        rcq_core::molgraph::SCHEMA_VERSION,
        PREDICTION_SCHEMA
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let version: &'static str = Box::leak(version_text().into_boxed_str());
    let matches = match Cli::command().version(version).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
