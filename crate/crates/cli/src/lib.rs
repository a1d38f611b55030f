//! Experiment runner for the `ness-kinetic` solver: JSON run configs,
//! static validation and the five scenarios.

pub mod config;
pub mod run;

pub use config::{ConfigError, Diagnostic, RunConfig, Scenario};
pub use run::{run, run_path, RunReport, THREADS_ENV};
