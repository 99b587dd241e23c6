//! CLI and HTTP front ends for `qsearch-core`.

pub mod api;
pub mod cli;

use std::io::{BufRead, Write};
use std::process::ExitCode;

use clap::Parser;

/// Parses `argv` and runs it: 0 on success, 2 on usage errors, 1 on runtime errors.
pub fn dispatch<I, T>(argv: I, input: &mut dyn BufRead, output: &mut dyn Write) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match cli::Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match cli::run(&cli, input, output) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
