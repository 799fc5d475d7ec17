//! File formats, run configuration, SVG charts and the subcommands behind
//! the `moser` binary.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod format;
pub mod svg;

pub use error::{CliError, CliResult};
