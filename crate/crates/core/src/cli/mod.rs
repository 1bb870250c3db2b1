//! Command-line front end: `run`, `simulate`, `admin` and `verify`.
//!
//! Exit codes: 0 success, 1 invalid configuration or input, 2 runtime failure.

pub mod admin;
pub mod run;
pub mod simulate;
pub mod verify;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::{locate, ConfigError, ConfigSource, RunConfig, CONFIG_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "pvdaq", version, about = "Photovoltaic test-bench data acquisition")]
pub struct Cli {
    /// Config file; overrides $DAQ_CONFIG and ./daq.toml.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the acquisition daemon until SIGINT/SIGTERM.
    Run,
    /// Replay one simulated day under a built-in fault scenario.
    Simulate {
        scenario: String,
        /// Cap on simulated seconds per wall second (default: as fast as possible).
        #[arg(long)]
        speedup: Option<f64>,
        /// Output directory (default: ./sim_out/<scenario>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Simulator seed (default: [sim] seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Operator shortcuts over the log, state and running daemon.
    Admin {
        #[command(subcommand)]
        action: AdminAction,
    },
    /// Cross-check the CSV archive against a line-protocol export.
    Verify { csv_dir: PathBuf, sink_export: PathBuf },
}

#[derive(Debug, Clone, Subcommand)]
pub enum AdminAction {
    /// Print the last lines of the log and follow it.
    Tail,
    /// Print the last N log entries.
    Recent { n: usize },
    /// Print log lines matching a regular expression.
    Grep { pattern: String },
    /// Per-level counts, reinit count and last frame time.
    Stats,
    /// Show the saved session state.
    State,
    /// Ask the running daemon to shut down cleanly.
    Stop,
}

/// Resolves and validates the configuration for a command.
pub fn load_config(flag: Option<&Path>) -> Result<(RunConfig, ConfigSource), CliError> {
    let cwd = std::env::current_dir().map_err(|e| CliError::Runtime(format!("current directory: {e}")))?;
    let env = std::env::var(CONFIG_ENV).ok();
    let source = locate(flag, env.as_deref(), &cwd);
    let cfg = RunConfig::load(&source, &cwd)?;
    cfg.validate()?;
    Ok((cfg, source))
}

/// Parses `args` and runs the command, printing errors to stderr.
/// Returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run => run::cmd_run(cli.config.as_deref()),
        Command::Simulate {
            scenario,
            speedup,
            out,
            seed,
        } => simulate::cmd_simulate(cli.config.as_deref(), scenario, *speedup, out.as_deref(), *seed),
        Command::Admin { action } => admin::cmd_admin(cli.config.as_deref(), action),
        Command::Verify { csv_dir, sink_export } => verify::cmd_verify(cli.config.as_deref(), csv_dir, sink_export),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("pvdaq: {e}");
            e.exit_code()
        }
    }
}
