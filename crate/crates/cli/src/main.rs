mod args;
mod commands;
mod error;
mod report;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("DMD_LOG"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::Ne(a) => commands::ne(a),
        Command::Dynamics(a) => commands::dynamics(a),
        Command::Dims(a) => commands::dims(a),
        Command::Validate(a) => commands::validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Assumption {
                suggest_extended: true,
                ..
            } = e
            {
                eprintln!("hint: rerun with --extended to add relay agents on link covers");
            }
            ExitCode::from(e.code())
        }
    }
}
