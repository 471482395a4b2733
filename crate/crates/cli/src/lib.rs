//! Command-line front end: run configuration, binary checkpoints, run
//! directories and the pipeline behind each `condgan` subcommand.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod rundir;

pub use commands::{run, Cli, Command};
pub use error::{CliError, CliResult};
