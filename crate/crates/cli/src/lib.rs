//! Experiment runner, case-study export and the `attnfid` command line.

pub mod artifacts;
pub mod case_study;
pub mod commands;
pub mod config;
pub mod failure;
pub mod runner;
pub mod svg;

pub use commands::run_cli;
pub use config::ExperimentConfig;
pub use failure::{Failure, Outcome};
