//! `sqlpref`: subcommand front end for the Text-to-SQL preference harness.
//!
//! Exit codes: 0 on success, 1 on validation errors (bad flags, missing or
//! malformed input artifacts), 2 on runtime errors.

mod commands;
mod config;
mod records;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::PipelineConfig;

#[derive(Parser)]
#[command(
    name = "sqlpref",
    version,
    about = "Execution-feedback preference pipeline for Text-to-SQL models"
)]
struct Cli {
    /// Key-value config file mirrored by flags; flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build database prompts (and normalized corpus files) from a benchmark.
    Prompt(commands::prompt::PromptArgs),
    /// Build CoT synthesis requests and dispatch them to an endpoint.
    Synthesize(commands::synthesize::SynthesizeArgs),
    /// Execute predicted SQL against the databases and judge EX/TS verdicts.
    Judge(commands::judge::JudgeArgs),
    /// Build the preference-pair dataset from judged rollouts.
    Pairs(commands::pairs::PairsArgs),
    /// Score judged rollouts under greedy, pass@1, or maj@k.
    Eval(commands::eval::EvalArgs),
    /// DPO losses, implicit rewards, token credits, and self-reward means.
    DpoMetrics(commands::dpo_metrics::DpoMetricsArgs),
    /// Label errors, compute fix rates, transitions, and output statistics.
    Analyze(commands::analyze::AnalyzeArgs),
    /// Assemble comparison tables and reward-hacking series from artifacts.
    Report(commands::report::ReportArgs),
}

/// Error class decides the exit code.
pub enum CliError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn validation(err: impl Into<anyhow::Error>) -> Self {
        CliError::Validation(err.into())
    }

    pub fn runtime(err: impl Into<anyhow::Error>) -> Self {
        CliError::Runtime(err.into())
    }
}

pub type CmdResult = Result<(), CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors; everything else is a
            // validation failure.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };

    let config = match &cli.config {
        Some(path) => match PipelineConfig::load(path) {
            Ok(config) => config,
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::from(1);
            }
        },
        None => PipelineConfig::default(),
    };

    let result = match cli.command {
        Command::Prompt(args) => commands::prompt::run(args, &config),
        Command::Synthesize(args) => commands::synthesize::run(args, &config),
        Command::Judge(args) => commands::judge::run(args, &config),
        Command::Pairs(args) => commands::pairs::run(args, &config),
        Command::Eval(args) => commands::eval::run(args, &config),
        Command::DpoMetrics(args) => commands::dpo_metrics::run(args, &config),
        Command::Analyze(args) => commands::analyze::run(args, &config),
        Command::Report(args) => commands::report::run(args, &config),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
