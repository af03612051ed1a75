//! Config-driven experiment runner for the `dfm` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use commands::{replay, run, run_text, Command, RunOptions};
pub use config::{ConfigError, RunConfig};
pub use error::CliError;
pub use manifest::RunManifest;
