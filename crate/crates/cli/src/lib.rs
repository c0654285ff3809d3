//! Experiment driver and verification suites for restart bandits.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod verify;

pub use error::CliError;
