//! Config parsing and experiment running for the `memlab` binary.

pub mod config;
pub mod error;
pub mod runner;

pub use config::{parse_config, parse_overrides, Command, ExperimentConfig};
pub use error::{exit, CliError};
pub use runner::{execute, run_experiment, run_with_threads, write_artifacts, RunOutcome, THREADS_ENV};
