//! `treatrank`: generate cohorts, train, validate and rank from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use treatrank_core::Error;

#[derive(Parser)]
#[command(
    name = "treatrank",
    version,
    about = "Treatment ranking for multi-arm randomized trials"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort and its ground truth from the configured generator.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: the config's `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split the complete cases and fit the ensemble.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a trained model and write the report tables.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank the arms for each patient row of a CSV file.
    Rank {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        patient: PathBuf,
        /// Write the rankings as CSV to this file instead of printing them.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Invariant(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Generate { config, out } => commands::generate(&config, out),
        Command::Train { config, out } => commands::train(&config, out),
        Command::Validate { config, model, out } => commands::validate(&config, &model, out),
        Command::Rank {
            config,
            model,
            patient,
            out,
            json,
        } => commands::rank(&config, &model, &patient, out, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
