//! Batch experiment runner: reads one TOML config, runs pipeline stages and
//! writes gnuplot-ready CSV plus a JSON manifest of everything it emitted.

// `!(x > 0.0)` is the NaN-rejecting form used for every parameter check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
mod stages;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};

pub use config::ExperimentConfig;
pub use output::RunManifest;

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Validate,
    Solve,
    Sweep,
    Mather,
    HamiltonianCheck,
    ApproxDemo,
    Full,
}

#[derive(Debug, Parser)]
#[command(name = "nlhj", version, about = "Nonlocal Hamilton-Jacobi experiments on the torus")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("no convergence: {0}")]
    NotConverged(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Core(nlhj_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Validation(_) => 3,
            CliError::NotConverged(_) => 4,
            CliError::Io { .. } | CliError::Manifest(_) | CliError::Core(_) => 1,
        }
    }
}

impl From<nlhj_core::Error> for CliError {
    fn from(e: nlhj_core::Error) -> Self {
        use nlhj_core::Error as E;
        match e {
            E::NotConverged { .. }
            | E::CflViolation { .. }
            | E::SimplexIterationLimit(_)
            | E::ScheduleFailure { .. } => CliError::NotConverged(e.to_string()),
            E::InvalidParameter(_) | E::InvalidMeasure(_) => CliError::Config(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

/// Runs the CLI on `argv` (program name first) and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&cli.config).map_err(|e| CliError::io(&cli.config, e))?;
    let mut cfg = ExperimentConfig::from_toml(&text).map_err(CliError::Config)?;
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let threads = pool.current_num_threads();
    let hash = output::sha256_hex(text.as_bytes());
    pool.install(|| stages::run_command(cli.command, &cfg, hash, threads))
}
