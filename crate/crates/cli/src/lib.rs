//! Configuration, run directories and subcommands of the `nsv` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::{validate_config, ExperimentConfig};
pub use error::{CliError, Result};
