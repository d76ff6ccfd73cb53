//! Argument parsing and the top-level run loop shared by the binary and tests.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{self, Command};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "rgp",
    version,
    about = "Rescaled and hierarchical Gaussian process regression"
)]
pub struct Args {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config (at most 2^63 − 1).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    pub seed: Option<u64>,
    /// Overrides output.dir.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Worker threads for replicate-level parallelism (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Test CSV; overrides data.test_path.
    #[arg(long, global = true)]
    pub test: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Sub {
    /// Replicated simulation for the main arm and every [[compare]] arm.
    Simulate,
    /// Fit the configured method and write fit.toml.
    Fit,
    /// Fit, then write predictions.csv for the test points.
    Predict,
    /// Hierarchical fit: chain.csv, summary.txt and predictions when test points exist.
    Hier,
    /// Empirical contraction rate over [rate].n_grid.
    Rate,
    /// Convenience ω estimate from near-duplicate sites (not part of the model).
    EstimateNoise {
        /// Sites at most this far apart count as duplicates.
        #[arg(long, default_value_t = 0.0)]
        radius: f64,
    },
}

impl Sub {
    fn command(&self) -> Command {
        match self {
            Sub::Simulate => Command::Simulate,
            Sub::Fit => Command::Fit,
            Sub::Predict => Command::Predict,
            Sub::Hier => Command::Hier,
            Sub::Rate => Command::Rate,
            Sub::EstimateNoise { radius } => Command::EstimateNoise { radius: *radius },
        }
    }
}

/// Loads the config, applies overrides, runs the command and writes its
/// outputs. Returns the output directory.
pub fn execute(args: &Args) -> CliResult<PathBuf> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config", "a configuration file is required"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.output {
        cfg.output.dir = o.clone();
    }
    let cmd = args.command.command();
    log::info!("{} with seed {}", cmd.name(), cfg.seed);
    let run = || commands::run(&cmd, &cfg, args.test.clone());
    let outputs = match args.threads {
        Some(0) => return Err(CliError::config("--threads", "must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::config("--threads", e))?
            .install(run)?,
        None => run()?,
    };
    outputs.write_atomic(&cfg.output.dir)?;
    Ok(cfg.output.dir)
}

/// Parses `argv`, runs, reports errors on stderr and returns the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&args) {
        Ok(dir) => {
            log::info!("outputs written to {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
