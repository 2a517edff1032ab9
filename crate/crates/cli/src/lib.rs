//! Experiment runner and self-check harness for the `greedy-dim` toolkit.

pub mod cohort;
pub mod config;
pub mod error;
pub mod experiment;
pub mod table;
pub mod verify;

pub use error::{CliError, Result};
