//! `iqsei`: dataset generation, estimator training and evaluation, decision
//! fitting, emitter-identification scenarios and report emission.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 for file
//! and format errors, 4 for numerical failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iqsei::{Error, ErrorClass};

mod commands;
mod config;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "iqsei", version, about = "IQ-imbalance emitter identification toolkit")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Run all numerics on one thread.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file; defaults are used when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Override one configuration value, e.g. `--set training.max_epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labelled dataset or a fixed-offset evaluation grid.
    Generate(commands::generate::GenerateArgs),
    /// Train an estimator on a dataset.
    Train(commands::train::TrainArgs),
    /// Evaluate an estimator on a grid dataset.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Fit per-offset Gaussians and decision boundaries to an estimator's output.
    FitDecision(commands::fit_decision::FitDecisionArgs),
    /// Run an emitter-identification scenario.
    Sei(commands::sei::SeiArgs),
    /// Summarize finished runs as Markdown.
    Report(commands::report::ReportArgs),
}

/// Thread settings after applying `--deterministic`.
#[derive(Debug, Clone, Copy)]
pub struct Runtime {
    pub threads: usize,
    pub deterministic: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Io => 3,
        ErrorClass::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let threads = if cli.deterministic {
        1
    } else {
        cli.threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    };
    let rt = Runtime {
        threads,
        deterministic: cli.deterministic,
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(4);
    }
    let result = match cli.command {
        Command::Generate(a) => commands::generate::run(a, rt),
        Command::Train(a) => commands::train::run(a, rt),
        Command::Evaluate(a) => commands::evaluate::run(a, rt),
        Command::FitDecision(a) => commands::fit_decision::run(a, rt),
        Command::Sei(a) => commands::sei::run(a, rt),
        Command::Report(a) => commands::report::run(a, rt),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
