mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use dbksvd::Error;

use crate::args::{Cli, Command};

/// Exit status for a failed command: 2 for configuration errors, 3 for I/O
/// and file-format errors, 4 for numerical blow-ups.
fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Error>() {
        return match e {
            Error::Io(_)
            | Error::BadMagic { .. }
            | Error::TruncatedFile { .. }
            | Error::UnsupportedDtype(_)
            | Error::UnsupportedVersion(_)
            | Error::Corrupt(_) => 3,
            Error::NonFiniteState { .. } => 4,
            _ => 2,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 3;
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DBKSVD_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Encode(a) => commands::encode_cmd(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
