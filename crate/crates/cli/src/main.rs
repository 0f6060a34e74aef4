mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

/// Two-mode simulation of a condensate split in a time-dependent double well.
#[derive(Parser)]
#[command(name = "twomode", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML, SI units).
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. `time.dt_s=1e-4`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write its outputs.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output directory; replaces `output.directory`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Replay the run in memory and fail unless the CSVs are byte-identical.
        #[arg(long)]
        seedless: bool,
    },
    /// Continue a run from a checkpoint file.
    Resume {
        /// Checkpoint written by `run`.
        #[arg(long, alias = "config")]
        checkpoint: PathBuf,
        /// Override an `output.*` value; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seedless: bool,
    },
    /// Report tunnelling regime, validity margins and memory needs without running.
    Estimate {
        #[command(flatten)]
        common: Common,
    },
    /// Check the closed-form basis coefficients against a brute-force oracle.
    Verify {
        /// Largest (even) boson number to check.
        #[arg(long, default_value_t = 8)]
        max_n: usize,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { common, output, seedless } => {
            let cfg = commands::load_config(&common.config, &common.overrides, output.as_deref())?;
            let dir = commands::run(&cfg, seedless)?;
            println!("{}", serde_json::json!({ "status": "ok", "output": dir }));
        }
        Command::Resume { checkpoint, overrides, output, seedless } => {
            let dir = commands::resume(&checkpoint, &overrides, output.as_deref(), seedless)?;
            println!("{}", serde_json::json!({ "status": "ok", "output": dir }));
        }
        Command::Estimate { common } => {
            let cfg = commands::load_config(&common.config, &common.overrides, None)?;
            print!("{}", commands::estimate(&cfg)?);
        }
        Command::Verify { max_n } => print!("{}", commands::verify(max_n)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
