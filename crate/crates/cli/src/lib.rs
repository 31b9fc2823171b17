//! Library side of the `gsimage` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;

pub use config::{Overrides, Settings};
pub use error::{exit, CliError, CliResult};
pub use manifest::RunManifest;
