use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use dbrn::cli::{run, Cli, SEED_ENV};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let env_seed = std::env::var(SEED_ENV).ok();
    match run(&cli, env_seed.as_deref()) {
        Ok(text) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return ExitCode::FAILURE;
            }
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("dbrn: {}", failure.message());
            ExitCode::from(failure.exit_code())
        }
    }
}
