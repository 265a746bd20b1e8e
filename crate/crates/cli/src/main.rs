use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = nipq_cli::Cli::parse();
    match nipq_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nipq: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
