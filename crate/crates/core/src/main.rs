use std::process::ExitCode;

use rirl::cli::{parse_config, run};
use rirl::error::Error;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cfg = match parse_config(std::env::args_os()) {
        Ok(cfg) => cfg,
        Err(Error::Usage(msg)) => {
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match run(&cfg) {
        Ok(()) => {
            log::info!("outputs written to {}", cfg.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
