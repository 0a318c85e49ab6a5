//! `densedial`: augment, train, index, search and evaluate from the shell.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable or malformed input), 3 internal error.

mod args;
mod manifest;
mod run;

use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::Parser;
use densedial::par::{configure_threads, Exec};
use densedial::Error;

use args::Cli;

const USAGE: u8 = 1;
const DATA: u8 = 2;
const INTERNAL: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    if e.is_data_error() {
        DATA
    } else if matches!(e, Error::Config(_)) {
        USAGE
    } else {
        INTERNAL
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(USAGE),
            };
        }
    };
    if !configure_threads(cli.threads) {
        log::warn!("worker pool was already initialized; --threads ignored");
    }

    let started = Instant::now();
    let mut touched = run::Touched::default();
    let result = run::dispatch(&cli.command, Exec::Parallel, &mut touched);
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("densedial {}: {e}", cli.command.name());
            exit_code(e)
        }
    };

    let m = manifest::RunManifest::new(&cli, &touched, started.elapsed(), code);
    match &cli.manifest {
        Some(path) => {
            if let Err(e) = m.write(path) {
                eprintln!("densedial: cannot write manifest: {e}");
                return ExitCode::from(if code == 0 { exit_code(&e) } else { code });
            }
        }
        None => log::debug!("manifest: {}", m.to_json()),
    }
    ExitCode::from(code)
}
