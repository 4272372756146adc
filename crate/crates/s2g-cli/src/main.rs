//! `s2g` — seeded experiment runner for the set-to-k-edge models.
//!
//! Subcommands: `generate`, `train`, `evaluate`, `render`, `all`. Every
//! run is driven by a JSON config (`--config`), with optional `--seed` and
//! `--out` overrides and a `--dry-run` mode that validates and prints the
//! plan without writing anything.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime error.

mod config;
mod experiment;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid configuration: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "s2g", version, about = "set-to-k-edge experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Validate and print the plan without writing anything.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or reuse cached) dataset splits.
    Generate(RunArgs),
    /// Generate datasets, train, and write checkpoint/metrics/summary.
    Train(RunArgs),
    /// Evaluate an existing checkpoint on the test split.
    Evaluate(RunArgs),
    /// Render truth-vs-prediction SVGs for up to 8 test sets.
    Render(RunArgs),
    /// Full pipeline: generate, train, evaluate, render.
    All(RunArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (args, action): (&RunArgs, fn(&config::Experiment, bool) -> Result<(), CliError>) =
        match &cli.command {
            Command::Generate(a) => (a, experiment::cmd_generate),
            Command::Train(a) => (a, |e, d| experiment::cmd_train(e, d, false)),
            Command::Evaluate(a) => (a, experiment::cmd_evaluate),
            Command::Render(a) => (a, experiment::cmd_render),
            Command::All(a) => (a, |e, d| experiment::cmd_train(e, d, true)),
        };
    let exp = config::parse_config(&args.config, args.seed, args.out.clone())?;
    action(&exp, args.dry_run)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Validation(_)) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
        Err(e @ CliError::Runtime(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
