use std::process::ExitCode;

use clap::Parser;
use ndt::cli::{run, Cli, DATA_DIR_ENV};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let env_dir = std::env::var(DATA_DIR_ENV).ok();
    let mut stdout = std::io::stdout().lock();
    match run(cli, env_dir, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ndt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
