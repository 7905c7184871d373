//! Helpers for the acceptance suite in `tests/acceptance.rs`.

use clap::Parser;
use fastweights_cli::args::Cli;
use fastweights_cli::commands::{run, CliResult, Status};
use serde_json::Value;

/// Runs a `fastweights` command line in-process with structured output and
/// returns its single record.
pub fn run_structured(args: &[&str]) -> CliResult<Value> {
    let cli = Cli::try_parse_from(
        std::iter::once("fastweights")
            .chain(args.iter().copied())
            .chain(["--format", "structured"]),
    )?;
    let mut out = Vec::new();
    match run(&cli.command, &mut out)? {
        Status::Success => Ok(serde_json::from_slice(&out)?),
        Status::ChecksFailed => {
            Err(format!("fastweights {} reported failed checks", args.join(" ")).into())
        }
    }
}
