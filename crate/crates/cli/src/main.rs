//! `lfz`: compress light fields to a single JPEG view and rebuild them with
//! the learned enhancement and disparity networks.

mod args;
mod commands;
mod plots;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<lfz_core::Error> for CliError {
    fn from(e: lfz_core::Error) -> Self {
        match e {
            lfz_core::Error::Shape(_) => CliError::Internal(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<lfz_core::pipeline::ContainerError> for CliError {
    fn from(e: lfz_core::pipeline::ContainerError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<lfz_core::nets::ArchiveError> for CliError {
    fn from(e: lfz_core::nets::ArchiveError) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.render().to_string();
            eprintln!("E1: {}", text.trim_end());
            return ExitCode::from(1);
        }
    };
    if let Ok(v) = std::env::var("LFZ_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                lfz_core::par::set_threads(n);
            }
            _ => {
                eprintln!("E1: LFZ_THREADS must be a positive integer, got '{v}'");
                return ExitCode::from(1);
            }
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("E{}: {}", e.code(), e.message());
            ExitCode::from(e.code())
        }
    }
}
