//! `permanence`: longitudinal score-permanence analysis from the command line.
//!
//! Exit status: 0 success, 1 I/O, 2 usage, 3 config, 4 missing prerequisite,
//! 5 calibration infeasible, 6 data, 7 model, 8 numerical. Failures print a
//! single line `error[<code>]: <message>` to stderr.

mod commands;
mod config;
mod error;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{CliError, Kind};

#[derive(Debug, Parser)]
#[command(name = "permanence", version, about = "Longitudinal biometric score permanence analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for every random draw; overrides `seed` from the config.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate the capture and score tables.
    Ingest(Common),
    /// Build genuine and impostor pairs and attach matcher scores.
    Pairs(Common),
    /// Calibrate thresholds to a target FMR.
    Calibrate(Common),
    /// FNMR by elapsed-time interval with confidence intervals.
    Fnmr(Common),
    /// DET curves, EER and AUC.
    Det(Common),
    /// Genuine failures of two matchers and their covariates.
    Failures(Common),
    /// AND-rule fusion of two matchers.
    Fuse(Common),
    /// Fit the configured mixed models.
    Lmm(Common),
    /// Compare age/time parameterizations.
    Apc(Common),
    /// Subject-level k-fold cross-validation.
    Cv(Common),
    /// Generate a synthetic cohort with known ground truth.
    Synth(Common),
    /// Render SVG figures from earlier outputs.
    Report(Common),
}

fn run(cmd: Command) -> Result<(), CliError> {
    let (common, f): (&Common, fn(&config::Loaded) -> Result<(), CliError>) = match &cmd {
        Command::Ingest(c) => (c, commands::ingest),
        Command::Pairs(c) => (c, commands::pairs),
        Command::Calibrate(c) => (c, commands::calibrate),
        Command::Fnmr(c) => (c, commands::fnmr),
        Command::Det(c) => (c, commands::det),
        Command::Failures(c) => (c, commands::failures),
        Command::Fuse(c) => (c, commands::fuse),
        Command::Lmm(c) => (c, commands::lmm),
        Command::Apc(c) => (c, commands::apc),
        Command::Cv(c) => (c, commands::cv),
        Command::Synth(c) => (c, commands::synth),
        Command::Report(c) => (c, commands::report),
    };
    let loaded = config::load(&common.config, common.out.as_deref(), common.seed)?;
    f(&loaded)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let err = CliError::new(Kind::Usage, first.trim_start_matches("error: "));
            eprintln!("{err}");
            return ExitCode::from(err.kind.exit_status() as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.kind.exit_status() as u8)
        }
    }
}
