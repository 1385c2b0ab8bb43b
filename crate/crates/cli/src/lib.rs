//! Command-line front end: file formats, experiment configs and subcommands.

pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod pgm;

pub use commands::{run, Cli, Command};
pub use error::{CliError, CliResult};
