//! Experiment harness for `fairfed-core`: configuration files, text dumps,
//! CSV and JSON artifacts, sweeps, diagnostics and the `fairfed` command
//! line.

pub mod config;
pub mod diagnose;
pub mod harness;
pub mod output;
pub mod textfmt;

pub use config::{ConfigError, ExperimentConfig};
pub use harness::{run_experiment, RunOptions, Summary};
