//! `rebat`: train, evaluate, sweep and diagnose adversarially trained models.

mod args;
mod artifacts;
mod diagnose;
mod runs;

use std::process::ExitCode;

use clap::Parser;
use rebat_core::Error;

use crate::args::{Cli, Command};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose { "info" } else { "warn" }))
        .init();
    let result = match cli.command {
        Command::Train(a) => runs::train(&a),
        Command::Sweep(a) => runs::sweep(&a),
        Command::Eval(a) => runs::eval(&a),
        Command::Diagnose(d) => diagnose::run(d),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            })
        }
    }
}
