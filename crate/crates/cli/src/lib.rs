//! File formats, run configuration, artifacts and subcommands for the
//! `poirec` command-line tool. The algorithms live in `poirec_core`.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod format;

pub use error::{CliError, Result};
