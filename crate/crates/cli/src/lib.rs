//! Command-line front end: experiment configuration and the commands that
//! write CSV/JSON results.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;

pub use config::{Args, Experiment, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] berngrad::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("audit failed: {0} of {1} checks outside the z bound")]
    AuditFailed(usize, usize),
}

impl CliError {
    /// 1 for configuration problems, 2 for runs that started and failed.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }
}

/// Caps the global worker pool from `BERNGRAD_THREADS`.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("BERNGRAD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("BERNGRAD_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size the worker pool: {e}")))
}

pub fn main_with_args<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = configure_threads()
        .and_then(|_| ExperimentConfig::resolve(args))
        .and_then(|cfg| commands::run(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}
