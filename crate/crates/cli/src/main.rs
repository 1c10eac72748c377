//! `uqline`: score, detrend and evaluate generation uncertainty.
//!
//! Exit codes: 0 success, 2 data or validation error, 64 usage error,
//! 65 schema or version mismatch, 66 missing input.

mod args;
mod commands;
mod error;
mod manifest;
mod svg;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use error::Exit;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let exit = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Exit::Success,
                _ => Exit::Usage,
            };
            return ExitCode::from(exit as u8);
        }
    };

    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Measures(a) => commands::measures(a),
        Command::Trends(a) => commands::trends(a),
        Command::Fit(a) => commands::fit(a),
        Command::Apply(a) => commands::apply(a),
        Command::Prr(a) => commands::prr_cmd(a),
        Command::Synth(a) => commands::synth(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit as u8)
        }
    }
}
