//! Experiment orchestration for the `rrr` command-line tool: TOML configs,
//! dataset materialization, training rosters, attack matrices, λ sweeps,
//! data-efficiency curves, FAE runs, JSON reports and PGM/PPM dumps.

pub mod config;
pub mod datasets;
pub mod error;
pub mod experiments;
pub mod image;
pub mod parallel;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use experiments::{run_experiment, RunOptions, Stages};
pub use report::Report;
