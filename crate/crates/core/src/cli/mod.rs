//! Command-line front end.
//!
//! ```text
//! spinbath [--config <path>] [--out <dir>] [--seed <u64>] [--threads <k>] [--strict] <command>
//! ```
//!
//! Commands: `generate`, `simulate`, `fit --input <csv>`, `sweep`, `converge`,
//! `oracle-check`. Exit codes: 0 success, 1 validation error, 2 numerical
//! failure (unconverged fit under `--strict`, oracle mismatch), 3 IO error.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io { .. } => 3,
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        use crate::Error::*;
        match e {
            NonHermitian(_) | ComplexTrace(_) | Eigen(_) | TargetNotReached { .. } => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "spinbath", version, about = "NV-center free-induction decay in a ¹³C bath")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir` in the configuration).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides `seed` in the configuration).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the data-parallel core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Treat unconverged fits as failures (exit code 2).
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a ¹³C configuration and write positions and couplings.
    Generate,
    /// Compute the Ramsey signal at `[simulate].field`.
    Simulate,
    /// Fit the stretched-exponential model to a CSV time series.
    Fit {
        /// CSV with a `t_s` column (comment lines starting with `#` are skipped).
        #[arg(long)]
        input: PathBuf,
        /// Column to fit; defaults to the only value column, else `envelope`
        /// (envelope-only fits) or `signal`.
        #[arg(long)]
        column: Option<String>,
    },
    /// Fit T₂* and n across a list of fields.
    Sweep,
    /// Envelopes for increasing numbers of nearest nuclei.
    Converge,
    /// Compare the product formula with exact diagonalization.
    OracleCheck,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Simulate => "simulate",
            Command::Fit { .. } => "fit",
            Command::Sweep => "sweep",
            Command::Converge => "converge",
            Command::OracleCheck => "oracle-check",
        }
    }
}

pub const DEFAULT_OUT_DIR: &str = "spinbath-out";

/// Everything a command needs: parsed configuration plus global flags.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub config_sha256: String,
    pub out_dir: PathBuf,
    pub strict: bool,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Result<Self, CliError> {
        let bytes = match &cli.config {
            Some(path) => std::fs::read(path)
                .map_err(|e| CliError::io(format!("reading {}", path.display()), e))?,
            None => Vec::new(),
        };
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| CliError::Validation("configuration is not valid UTF-8".into()))?;
        let mut config = RunConfig::from_toml(text)?;
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        let out_dir = cli
            .out
            .clone()
            .or_else(|| config.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        Ok(Context {
            config,
            config_sha256: output::sha256_hex(&bytes),
            out_dir,
            strict: cli.strict,
        })
    }
}

fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    let Some(k) = threads else { return Ok(()) };
    if k == 0 {
        return Err(CliError::Validation("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(k)
        .build_global()
        .map_err(|e| CliError::Validation(format!("--threads: {e}")))?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    configure_threads(cli.threads)?;
    let ctx = Context::from_cli(cli)?;
    match &cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Fit { input, column } => commands::fit(&ctx, input, column.as_deref()),
        Command::Sweep => commands::sweep(&ctx),
        Command::Converge => commands::converge(&ctx),
        Command::OracleCheck => commands::oracle_check(&ctx),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
