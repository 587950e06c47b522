use std::process::ExitCode;

use clap::Parser;
use lutllm_cli::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("LUTLLM_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: LUTLLM_THREADS: {e}");
                    return ExitCode::FAILURE;
                }
            }
            _ => {
                eprintln!("error: LUTLLM_THREADS must be a positive integer, got {n:?}");
                return ExitCode::FAILURE;
            }
        }
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match lutllm_cli::run(&cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
