//! Subcommand implementations behind the `cfs` binary.

pub mod config;
mod pipeline;

pub use config::{CliError, CliResult, RunConfig};
pub use pipeline::*;
