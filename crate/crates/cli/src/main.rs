//! `distillery` — train expert trajectories, distill a small synthetic
//! dataset that reproduces their parameter flow, and evaluate the result.

mod commands;
mod config;
mod error;
mod flags;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::Result;
use crate::flags::Overrides;

#[derive(Debug, Parser)]
#[command(
    name = "distillery",
    about = "Trajectory-matching dataset distillation at desk scale",
    version,
    max_term_width = 100
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct ConfiguredArgs {
    /// Configuration file (TOML); defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

impl ConfiguredArgs {
    /// File < flags, then derive seeds and validate.
    fn resolve(self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        self.overrides.apply(&mut cfg);
        cfg.resolve()
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train expert trajectories and save one directory per seed.
    Buffer(ConfiguredArgs),
    /// Distill a synthetic dataset against saved expert trajectories.
    Distill(ConfiguredArgs),
    /// Train fresh networks on a distilled set or a baseline and report accuracy.
    Eval(EvalArgs),
    /// Run every derivative check against finite differences.
    Gradcheck(GradcheckArgs),
    /// Merge run directories into one long-format CSV.
    Report(ReportArgs),
}

#[derive(Debug, clap::Args)]
struct EvalArgs {
    #[command(flatten)]
    configured: ConfiguredArgs,
    /// Directory holding a distilled synthetic dataset.
    #[arg(long, value_name = "DIR", conflicts_with = "baseline")]
    synthetic: Option<PathBuf>,
    /// Evaluate a reference instead: random real subsets or the full data.
    #[arg(long, value_name = "KIND")]
    baseline: Option<commands::eval::Baseline>,
}

#[derive(Debug, clap::Args)]
struct GradcheckArgs {
    #[command(flatten)]
    configured: ConfiguredArgs,
    /// Finite-difference step.
    #[arg(long, value_name = "X", default_value_t = 1e-5)]
    eps: f64,
}

#[derive(Debug, clap::Args)]
struct ReportArgs {
    /// Run directories (or roots containing them) to merge.
    #[arg(value_name = "DIR", required = true)]
    dirs: Vec<PathBuf>,
    /// Output CSV file; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Buffer(args) => commands::buffer::run(&args.resolve()?),
        Command::Distill(args) => commands::distill::run(&args.resolve()?),
        Command::Eval(args) => {
            let target = commands::eval::Target::from_flags(args.synthetic, args.baseline)?;
            commands::eval::run(&args.configured.resolve()?, target)
        }
        Command::Gradcheck(args) => commands::gradcheck::run(&args.configured.resolve()?, args.eps),
        Command::Report(args) => commands::report::run(&args.dirs, args.out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
