//! The `dss` command-line tool.
//!
//! Exit codes: 0 success, 1 validation or configuration error (including failed self-checks),
//! 2 numeric error, 3 I/O error.

pub mod cli;
pub mod commands;
pub mod provenance;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;
use dss_core::Error;

use crate::cli::{Cli, Command};

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Numeric { .. } => 2,
        Error::Io { .. } | Error::Image { .. } => 3,
        Error::Config(_)
        | Error::Validation(_)
        | Error::Usage(_)
        | Error::Generation(_)
        | Error::Checkpoint(_) => 1,
    }
}

/// Runs one command. `Ok(false)` means the command ran but reported failures.
pub fn execute(command: &Command) -> dss_core::Result<bool> {
    match command {
        Command::Synth(a) => commands::synth(a).map(|_| true),
        Command::Train(a) => commands::train(a).map(|_| true),
        Command::Infer(a) => commands::infer(a).map(|_| true),
        Command::Eval(a) => commands::eval(a).map(|_| true),
        Command::Ablate(a) => commands::ablate(a).map(|_| true),
        Command::Selfcheck(a) => Ok(commands::selfcheck(a)),
    }
}

pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
