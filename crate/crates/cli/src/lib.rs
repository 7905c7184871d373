//! Command-line driver for the `fastweights` library: argument parsing,
//! subcommands, oracle verification suites and the cost benchmark.

pub mod args;
pub mod bench;
pub mod commands;
pub mod verify;
