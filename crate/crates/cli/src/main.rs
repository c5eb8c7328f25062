//! `pointpair` command-line driver.
//!
//! Exit codes: 0 success, 2 input or contract error, 3 I/O error.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

fn exit_code(err: &pointpair::Error) -> u8 {
    if err.is_io() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let ctx = commands::Context { seed: cli.seed, out: cli.out.clone() };
    match commands::run(&ctx, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
