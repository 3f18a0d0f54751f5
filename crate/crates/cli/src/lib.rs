//! Batch driver for the concept-bottleneck pipeline: configuration, subcommands, reports and a
//! synthetic data generator.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use config::{Overrides, PipelineConfig, Settings};
pub use error::{CliError, Result};
