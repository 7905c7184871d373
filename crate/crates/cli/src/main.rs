use std::io::{self, Write};
use std::process::ExitCode;

use clap::Parser;
use fastweights_cli::args::Cli;
use fastweights_cli::commands::{run, Status};

/// Caps the rayon pool at `FW_THREADS` workers when set to a positive count.
fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("FW_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("FW_THREADS={raw:?} is not a thread count"))?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = run(&cli.command, &mut out);
    let _ = out.flush();
    match result {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::ChecksFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
