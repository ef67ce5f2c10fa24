mod args;
mod commands;
mod config;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::Cli;

/// Errors raised by the binary itself rather than the library.
#[derive(Debug)]
pub enum Failure {
    /// Contradictory or invalid options; exit code 1.
    Validation(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

fn with_overrides(cmd: clap::Command) -> clap::Command {
    cmd.args_override_self(true).mut_subcommands(with_overrides)
}

/// 2 for I/O failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<kgrerank::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.downcast_ref::<Failure>().is_some() {
            return 1;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let raw: Vec<OsString> = std::env::args_os().collect();
    let quiet = raw.iter().any(|a| a == "--quiet" || a == "-q");
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if quiet { "warn" } else { "info" }))
        .format_timestamp(None)
        .init();

    let cmd = with_overrides(Cli::command());
    let args = match config::expand_args(&cmd, raw) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let cli = match cmd.try_get_matches_from(args).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
