// SPDX-License-Identifier: MIT OR Apache-2.0

//! `synloc`: localize syntax-responsive units and run the overlap, ablation
//! and cross-lingual analyses from the command line.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, Flags};
use crate::failure::{Failure, EXIT_CONFIG};

#[derive(Debug, Parser)]
#[command(name = "synloc", version, about = "Syntax-unit localization experiments")]
struct Cli {
    /// More log output (-v info, -vv debug); RUST_LOG overrides
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Localize the top units of every phenomenon and write unit-set files
    Localize(Flags),
    /// k-fold consistency per phenomenon, with Random and control rows
    Crossval(Flags),
    /// Accuracy drop from ablating localized versus random units
    Ablate(Flags),
    /// Pairwise overlap matrix, category and agreement summaries, layer breakdown
    Overlap(Flags),
    /// Overlap against syntactic similarity, and agreement overlap against a reference benchmark
    Crosslingual(Flags),
    /// Check a run directory against its manifest
    Verify {
        /// Run directory (`<out>/runs/<digest>`)
        path: PathBuf,
    },
}

type Handler = fn(&ExperimentConfig) -> Result<PathBuf, Failure>;

fn run(cli: Cli) -> Result<(), Failure> {
    let (flags, cmd): (Flags, Handler) = match cli.command {
        Command::Verify { path } => return commands::verify(&path),
        Command::Localize(f) => (f, commands::localize),
        Command::Crossval(f) => (f, commands::crossval),
        Command::Ablate(f) => (f, commands::ablate),
        Command::Overlap(f) => (f, commands::overlap),
        Command::Crosslingual(f) => (f, commands::crosslingual),
    };
    let cfg = ExperimentConfig::resolve(&flags)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(format!("--threads: {e}")))?;
    }
    cmd(&cfg).map(|_| ())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
