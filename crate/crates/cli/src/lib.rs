//! Pipeline orchestration behind the `shapval` binary.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use commands::Ctx;
pub use config::{load, Loaded, RunConfig};
pub use error::{CliError, CliResult};
