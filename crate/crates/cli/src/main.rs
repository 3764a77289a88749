use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use wdlab_cli::commands::{cmd_compare, cmd_run, cmd_validate, EXIT_FAILURE};

/// Weight-decay experiments: simulate, summarize, compare.
#[derive(Parser)]
#[command(name = "wdlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configuration in an experiment file.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Maximum concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare two trajectory CSVs.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and validate an experiment file.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                // exit 2 is reserved for aborted runs
                _ => ExitCode::from(EXIT_FAILURE),
            };
        }
    };
    let code = match cli.command {
        Command::Run { config, out, jobs } => cmd_run(&config, &out, jobs),
        Command::Compare { a, b, out } => cmd_compare(&a, &b, &out),
        Command::Validate { config } => cmd_validate(&config),
    };
    ExitCode::from(code)
}
