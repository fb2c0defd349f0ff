//! Configuration-driven experiment runner for the `shm_denoise` pipeline.
//!
//! ```text
//! shm-denoise <generate|train|eval|attention|gradcheck> --config <path> [--set k=v]... [--out <dir>]
//! ```

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::Context;
pub use config::{ExperimentConfig, SEED_ENV};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "shm-denoise",
    version,
    about = "Denoise and forecast multi-sensor vibration records"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the clean and noisy bench records as CSV.
    Generate(RunArgs),
    /// Fit a network and write its checkpoint and training report.
    Train(RunArgs),
    /// Score a checkpoint on the evaluation split.
    Eval(RunArgs),
    /// Export per-window attention weights.
    Attention(RunArgs),
    /// Compare every layer's gradients with central differences.
    Gradcheck(RunArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one field, e.g. `--set train.max_epochs=5`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

impl Command {
    fn args(&self) -> &RunArgs {
        match self {
            Command::Generate(a)
            | Command::Train(a)
            | Command::Eval(a)
            | Command::Attention(a)
            | Command::Gradcheck(a) => a,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Attention(_) => "attention",
            Command::Gradcheck(_) => "gradcheck",
        }
    }
}

fn context(command: &Command) -> Result<Context, CliError> {
    let args = command.args();
    if args.config.is_none() && !matches!(command, Command::Gradcheck(_)) {
        return Err(CliError::Usage(format!("{} requires --config <path>", command.name())));
    }
    let mut config = ExperimentConfig::load(args.config.as_deref(), &args.set)?;
    config.apply_seed_env()?;
    Ok(Context {
        config,
        out: args.out.clone(),
    })
}

/// Executes one parsed command.
pub fn execute(command: &Command) -> Result<(), CliError> {
    let ctx = context(command)?;
    match command {
        Command::Generate(_) => commands::generate(&ctx),
        Command::Train(_) => commands::train(&ctx).map(drop),
        Command::Eval(_) => commands::eval(&ctx).map(drop),
        Command::Attention(_) => commands::attention(&ctx).map(drop),
        Command::Gradcheck(_) => commands::gradcheck(ctx.config.train.seed).map(drop),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit
/// status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
