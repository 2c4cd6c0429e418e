//! `optma`: dataset generation, training, gradient checks and experiments.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use optma::models::Family;

#[derive(Debug, Parser)]
#[command(name = "optma", version, about = "Physics-infused transfer-mapping networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON config: a generator config for gen-data, an experiment config
    /// for train and experiment.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Overrides the config seed(s).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    /// Print errors only.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset CSV and its config-hash sidecar.
    GenData,
    /// Train one seed and write a parameter checkpoint per family.
    Train {
        /// Restrict training to one family.
        #[arg(long, value_parser = parse_family)]
        family: Option<Family>,
    },
    /// Check every tape primitive and physics head against finite differences.
    GradCheck {
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        /// Test fixture: run with a deliberately wrong adjoint.
        #[arg(long, hide = true, value_enum)]
        inject_fault: Option<FaultArg>,
    },
    /// Run every family on every seed and write the report and scatter data.
    Experiment,
    /// Summarize an existing report, optionally re-emitting scatter CSVs.
    Report {
        /// Report JSON written by `experiment`.
        input: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FaultArg {
    CosAdjoint,
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: optma::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
