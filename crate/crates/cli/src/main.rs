mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use hyps_core::Error;

/// Environment variable holding the log filter (e.g. `info`, `debug`).
const LOG_ENV: &str = "HYPS_LOG";

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } | Error::Numeric(_) => 3,
        Error::Insufficient(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or(LOG_ENV, "warn")).init();
    let cli = args::Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
