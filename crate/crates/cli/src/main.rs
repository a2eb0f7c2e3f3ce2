//! `wings`: train small networks, score layer sensitivity, compress weights
//! into PCA + SVR artifacts, run inference from them, inject bit flips and
//! estimate memory, energy and ECC costs.
//!
//! Every run prints a JSON summary (config echo, seed, output hashes) on
//! stdout; progress goes to stderr.

mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use wings_core::WingsError;

use args::Cli;

pub const EXIT_CONTRACT: u8 = 1;
pub const EXIT_FORMAT: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(WingsError),
}

impl From<WingsError> for CliError {
    fn from(e: WingsError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(WingsError::Io(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(WingsError::Format { .. }) => EXIT_FORMAT,
            CliError::Core(_) => EXIT_CONTRACT,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::merge_config(argv) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("wings: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("wings: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
