//! `hgnl` command-line front-end.
//!
//! Exit status: 0 success, 1 runtime failure (e.g. divergence), 2 usage,
//! 3 configuration, 4 I/O or malformed file, 5 check failure.

mod args;
mod commands;

use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_IO: u8 = 4;
pub const EXIT_CHECK: u8 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
    }

    pub fn check(message: impl Into<String>) -> Self {
        Self { code: EXIT_CHECK, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<hgnl_core::Error> for Failure {
    fn from(e: hgnl_core::Error) -> Self {
        use hgnl_core::Error as E;
        let code = match &e {
            E::Config(_) | E::Dimension(_) | E::Sampling(_) | E::EmptyInput(_) => EXIT_CONFIG,
            E::Io { .. } | E::Format { .. } => EXIT_IO,
            E::Diverged { .. } | E::Contract(_) => EXIT_RUNTIME,
        };
        Self { code, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Cost(c) => commands::cost(c),
        Command::Gradcheck(c) => commands::gradcheck(c),
        Command::GenData(c) => commands::gen_data(c),
        Command::Train(c) => commands::train(c),
        Command::Eval(c) => commands::eval(c),
        Command::Bench(c) => commands::bench(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
