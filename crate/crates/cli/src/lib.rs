//! Command-line front end: CSV and schema I/O, TOML configuration, model
//! checkpoints and run manifests around the `margot` library.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;

pub use commands::{run, Cli, Command};
pub use error::{CliError, CliResult};

/// Prefix of the environment variables that stand in for command-line flags.
pub const ENV_PREFIX: &str = "MARGOT_";
