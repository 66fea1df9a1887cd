// Copyright 2026 qrepeat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Command-line front end for the qrepeat toolkit: structured-text run
//! configurations in, machine-readable artifacts out, with deterministic
//! seeding end to end.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod config;
pub mod output;
pub mod run;

/// Environment variable naming the rayon thread count for ensemble runs.
pub const THREADS_ENV_VAR: &str = "QREPEAT_THREADS";

/// Process exit code for configuration problems (parse errors, schema
/// violations, dimension mismatches, steps beyond the window).
pub const EXIT_CONFIG: i32 = 2;
/// Process exit code for numerical-assumption failures at run time
/// (ill-conditioned memory kernel, degenerate observable where one is
/// forbidden, probability leaks).
pub const EXIT_NUMERICAL: i32 = 3;
/// Process exit code for filesystem failures.
pub const EXIT_IO: i32 = 4;

/// A front-end failure, tagged by which exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// The configuration could not be parsed or validated.
    #[error("configuration error: {0}")]
    Config(String),
    /// An engine rejected the run for numerical reasons.
    #[error("numerical failure: {0}")]
    Numerical(qrepeat_core::Error),
    /// A cross-check leg exceeded its tolerance.
    #[error("verification failed: {0}")]
    Check(String),
    /// A file could not be read or written.
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// The process exit code this failure maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) | CliError::Check(_) => EXIT_NUMERICAL,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    /// Wrap an I/O error with the path it happened on.
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}

/// Simulate repeated quantum interactions with a finite memory window.
#[derive(Debug, Parser)]
#[command(name = "qrepeat", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Path to the run configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for output files (created if missing; default: current dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the configured base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the configured ensemble size.
    #[arg(long)]
    pub ensemble: Option<usize>,
}

/// The available run modes.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Unitary chain evolution; writes the reduced state per step.
    Evolve(CommonArgs),
    /// Memory-resolved evolution split into product and correlated parts.
    Nz(CommonArgs),
    /// Time-local evolution through the inverted memory kernel.
    Tcl(CommonArgs),
    /// Sample measured trajectories and write one record per member.
    Trajectories(CommonArgs),
    /// Purity scan plus branch-operator analysis of the measured dynamics.
    Unravel(CommonArgs),
    /// Cross-check the engines against each other on this configuration.
    Verify(CommonArgs),
}

impl Command {
    /// The shared options of whichever subcommand was chosen.
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Evolve(c)
            | Command::Nz(c)
            | Command::Tcl(c)
            | Command::Trajectories(c)
            | Command::Unravel(c)
            | Command::Verify(c) => c,
        }
    }

    /// Stable name used in metadata and reports.
    pub fn name(&self) -> &'static str {
        match self {
            Command::Evolve(_) => "evolve",
            Command::Nz(_) => "nz",
            Command::Tcl(_) => "tcl",
            Command::Trajectories(_) => "trajectories",
            Command::Unravel(_) => "unravel",
            Command::Verify(_) => "verify",
        }
    }
}

/// Configure the global rayon pool from the environment. Invalid values are
/// configuration errors; a pool that is already running is left as is.
pub fn init_threads_from_env() -> Result<(), CliError> {
    if let Ok(raw) = std::env::var(THREADS_ENV_VAR) {
        let n: usize = raw.trim().parse().map_err(|_| {
            CliError::Config(format!(
                "{THREADS_ENV_VAR} must be a positive integer, got {raw:?}"
            ))
        })?;
        if n == 0 {
            return Err(CliError::Config(format!(
                "{THREADS_ENV_VAR} must be a positive integer, got 0"
            )));
        }
        // A second initialization can only happen if a pool already exists
        // (e.g. a same-process harness); the existing pool wins.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Full front-end entry point: parse arguments, run, map failures to exit
/// codes. Argument errors exit through clap with its usage code.
pub fn cli_main() -> i32 {
    let cli = Cli::parse();
    match init_threads_from_env().and_then(|()| run::dispatch(&cli.command)) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            err.exit_code()
        }
    }
}
