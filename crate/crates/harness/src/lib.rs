//! Experiment harness: configuration, phantom experiments, CLAHE baseline,
//! gain estimation, reports and the `contrast` command line.

pub mod clahe;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod gain;
pub mod manifest;
pub mod plot;

pub use config::{ExperimentConfig, Profile};
pub use error::{HarnessError, Result};
