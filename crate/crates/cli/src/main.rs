mod config;
mod run;

use std::process::ExitCode;

use config::ParseFailure;
use run::{Failure, EXIT_OK};

fn fail(f: Failure) -> ExitCode {
    eprintln!("{}", f.record());
    ExitCode::from(f.code() as u8)
}

fn main() -> ExitCode {
    let cfg = match config::parse(std::env::args_os()) {
        Ok(c) => c,
        Err(ParseFailure::Clap(e)) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::from(EXIT_OK as u8);
        }
        Err(ParseFailure::Clap(e)) => {
            return fail(Failure::Usage(e.to_string().trim().to_string()))
        }
        Err(ParseFailure::Config(m)) => return fail(Failure::Usage(m)),
    };
    match run::run(&cfg) {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => fail(f),
    }
}
