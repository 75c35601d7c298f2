//! Command-line layer for epnkit: audits, benchmarks, toy training and file conversion.

pub mod audit;
pub mod bench;
pub mod commands;
pub mod error;
pub mod group_json;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult};
