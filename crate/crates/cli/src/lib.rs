//! Experiment harness around the `cnext` solver: TOML configuration, trace
//! CSVs, JSON manifests and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, CliResult};
