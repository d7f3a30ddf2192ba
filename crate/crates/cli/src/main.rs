//! `pupil-design` command-line front end.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::*;

/// Asymmetric pupil design for single-shot wavefront sensing.
#[derive(Debug, Parser)]
#[command(name = "pupil-design", version, propagate_version = true)]
pub struct Cli {
    /// Flat key = value config file; flags override it
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// RNG seed (default 0)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default ".")
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (default: available cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Grid side length in pixels (default 128)
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Reference circle diameter in pixels (default n / 2)
    #[arg(long, global = true)]
    pub diameter: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an asymmetry-binned pupil set and write it as a dataset
    GenPupils(GenPupilsArgs),
    /// Generate (pupil, phase, PSF) triplets for a pupil set
    GenDataset(GenDatasetArgs),
    /// Print the asymmetry of a pupil
    Asymmetry(AsymmetryArgs),
    /// Write the forward PSF of a pupil and phase
    Psf(PsfArgs),
    /// Estimate the phase from a PSF file
    Retrieve(RetrieveArgs),
    /// Run the asymmetry trend study
    Trend(TrendArgs),
    /// Run the trend study over aberration scales
    Scales(ScalesArgs),
    /// Sweep the small-asymmetry perturbation and fit its log-log slope
    Property1(Property1Args),
    /// Rank candidate pupils by Monte-Carlo score
    Search(SearchArgs),
    /// Render an image blurred by the aberrated and the corrected PSF
    Correct(CorrectArgs),
    /// Simulate the PSF realized by a checkerboard-encoded SLM
    Slm(SlmArgs),
}

/// An error caused by how the tool was invoked rather than by the run.
#[derive(Debug)]
pub struct Usage(pub String);

impl Usage {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<Usage>().is_some() => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
