//! `pomclab`: batch experiment runner for the model engines.
//!
//! Usage: `pomclab <command> --config <path> [--seed N --out DIR --workers K]`.
//! The subcommand must match the `command` key of the config file. Exit
//! codes: 0 success, 2 config error, 3 numeric failure, 4 io failure; on
//! failure a single-line JSON record goes to standard error.

mod config;
mod runner;
mod table;

use clap::{Args, Parser, Subcommand};
use config::CommandKind;
use runner::{run, Overrides, RunError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pomclab", version, about = "Partially observed Markov chain lab")]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker pool size (also: POMCLAB_WORKERS).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Simulate a state and observation path.
    Simulate(RunArgs),
    /// Simulate-then-fit replicates over a parameter box.
    Fit(RunArgs),
    /// Kullback-Leibler profile around the true parameter.
    KlProfile(RunArgs),
    /// Equivalence-class consistency sweep over sample sizes.
    Consistency(RunArgs),
    /// Filter / recursion forgetting diagnostic.
    FilterForget(RunArgs),
    /// Return-time tail diagnostic of the state chain.
    ReturnTail(RunArgs),
    /// Stationary moment estimate of the state chain.
    Moment(RunArgs),
}

impl CliCommand {
    fn split(self) -> (CommandKind, RunArgs) {
        match self {
            CliCommand::Simulate(a) => (CommandKind::Simulate, a),
            CliCommand::Fit(a) => (CommandKind::Fit, a),
            CliCommand::KlProfile(a) => (CommandKind::KlProfile, a),
            CliCommand::Consistency(a) => (CommandKind::Consistency, a),
            CliCommand::FilterForget(a) => (CommandKind::FilterForget, a),
            CliCommand::ReturnTail(a) => (CommandKind::ReturnTail, a),
            CliCommand::Moment(a) => (CommandKind::Moment, a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (expect, args) = cli.command.split();

    let config_text = match std::fs::read_to_string(&args.config) {
        Ok(text) => text,
        Err(e) => {
            return fail(&RunError::Config(format!(
                "cannot read config {}: {e}",
                args.config.display()
            )))
        }
    };
    let overrides = Overrides {
        seed: args.seed,
        out: args.out,
        workers: args.workers,
        expect_command: Some(expect),
    };
    match run(&config_text, &overrides) {
        Ok(outcome) => {
            for file in &outcome.files {
                println!("wrote {}", outcome.output_dir.join(file).display());
            }
            println!("wrote {}", outcome.output_dir.join("manifest.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn fail(e: &RunError) -> ExitCode {
    let record = serde_json::json!({ "error": e.kind(), "message": e.message() });
    eprintln!("{record}");
    ExitCode::from(e.exit_code() as u8)
}
