//! `uap`: build, verify and study single-hidden-layer network constructions.
//!
//! Exit codes: 0 success, 1 mathematical failure, 2 usage or configuration error.

mod commands;
mod config;
mod expr;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Common;
use crate::config::Overrides;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "configuration error: {m}"),
            CliError::Failure(m) => write!(f, "construction failed: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "uap", version, about = "Constructive network synthesis with certified uniform error")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the construction seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Certification grid floor per axis (build, demo) or plain grid resolution (verify).
    #[arg(long)]
    grid_res: Option<usize>,
    /// Largest scale index to try.
    #[arg(long)]
    max_k: Option<usize>,
}

impl CommonArgs {
    fn common(self) -> Common {
        Common {
            config: self.config,
            out: self.out,
            overrides: Overrides { seed: self.seed, grid_res: self.grid_res, max_k: self.max_k },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Construct a network from a build configuration.
    Build(CommonArgs),
    /// Recompute the error of a stored network against a build configuration.
    Verify {
        /// Network JSON written by `build`.
        #[arg(long)]
        network: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a density, random-feature, barycentric, alternation or growth study.
    Study(CommonArgs),
    /// Run the built-in scenarios.
    Demo(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Build(a) => commands::build(&a.common()),
        Command::Verify { network, common } => commands::verify(&common.common(), &network),
        Command::Study(a) => commands::study(&a.common()),
        Command::Demo(a) => commands::demo(&a.common()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Failure(_) => 1,
            })
        }
    }
}
