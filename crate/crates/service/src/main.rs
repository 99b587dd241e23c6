use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    let stdin = io::stdin();
    qsearch::dispatch(std::env::args_os(), &mut stdin.lock(), &mut io::stdout())
}
