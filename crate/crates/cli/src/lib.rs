//! Command-line harness: corpus generation, pretraining, adaptation,
//! evaluation, prompt-size ablation and n-best rescoring.

pub mod commands;
pub mod config;
pub mod data;

pub use commands::*;
pub use config::ExperimentConfig;
