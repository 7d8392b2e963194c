//! Command-line runner for `qdyn-core` experiments.
//!
//! A run reads one TOML configuration ([`config::RunConfig`]), validates it
//! against the chosen verb, runs the experiment on a worker pool of the
//! configured size and writes CSV tables, `manifest.json` and `summary.txt`.
//! Exit codes: 0 success, 1 configuration error, 2 failed check.

pub mod config;
pub mod experiments;
pub mod report;

use std::path::PathBuf;

use clap::Parser;

use config::{ConfigError, Experiment, RunConfig};
use experiments::Failure;
use report::Artifacts;

/// Command-line arguments.
#[derive(Debug, Parser)]
#[command(name = "qdyn", version, about = "Transfer-matrix and wavepacket experiments for 1D discrete Schrödinger operators")]
pub struct Cli {
    /// Experiment to run.
    #[arg(value_enum)]
    pub experiment: Experiment,
    /// TOML configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `out` in the file; default `out/<experiment>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (overrides `threads`).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Seed for random energy sampling (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Leave wall times out of the manifest, making every output file reproducible.
    #[arg(long)]
    pub no_timings: bool,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_CHECK: i32 = 2;

/// Loads the configuration and applies command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(out) = &cli.out {
        config.out = Some(out.clone());
    }
    if let Some(t) = cli.threads {
        config.threads = t;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    config.validate(cli.experiment)?;
    Ok(config)
}

/// Runs one invocation and returns the process exit code. Diagnostics go to stderr.
pub fn run(cli: &Cli) -> i32 {
    let config = match resolve_config(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(config.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{}", ConfigError::new("threads", e.to_string()));
            return EXIT_CONFIG;
        }
    };
    let mut art = Artifacts::new(cli.experiment);
    let outcome = pool.install(|| experiments::run(cli.experiment, &config, &mut art));
    match outcome {
        Ok(()) => {}
        Err(Failure::Config(e)) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
        Err(Failure::Compute(e)) => {
            eprintln!("check failed: {}", e.to_string().replace('\n', " "));
            return EXIT_CHECK;
        }
    }
    let dir = config
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(cli.experiment.name()));
    if let Err(e) = art.write(&dir, &config, !cli.no_timings) {
        eprintln!("{}", ConfigError::new("--out", format!("cannot write {}: {e}", dir.display())));
        return EXIT_CONFIG;
    }
    print!("{}", art.summary());
    if art.failed() {
        EXIT_CHECK
    } else {
        EXIT_OK
    }
}
