//! Experiment runner: dataset generation, training, rank selection and evaluation,
//! each writing CSV artifacts into the configured output directory.

pub mod commands;
pub mod config;
pub mod output;

pub use config::{Experiment, ExperimentConfig};
