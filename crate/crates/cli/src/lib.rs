//! Library side of the `punet` executable: run configuration, subcommands
//! and exit-code mapping.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{RunConfig, RESOLVED_CONFIG, SEED_ENV};
pub use error::{CliError, Result};
