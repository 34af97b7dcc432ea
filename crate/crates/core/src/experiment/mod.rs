//! Config-driven experiment runner, Monte Carlo verification suites and
//! output helpers shared by the command-line front end.

pub mod config;
pub mod format;
pub mod runner;
pub mod svg;
pub mod verify;

pub use config::{ConfigError, ExperimentConfig};
pub use format::{format_g, format_sig12};
pub use runner::{aggregate_csv, run_experiment, summary_json, write_outputs, RunError, RunOutput};
