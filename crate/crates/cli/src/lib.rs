//! Command-line experiment runner for the `shelab` library: TOML
//! configuration, a fixed-size worker pool and deterministic output files.

pub mod config;
pub mod error;
pub mod run;

pub use config::{Experiment, ExperimentConfig, Format};
pub use error::CliError;
pub use run::{load_config, run, validate_listing, Outcome, RunOptions};
