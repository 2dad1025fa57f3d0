//! Pipeline driver for exemvad: configuration, stage orchestration, stage
//! manifests and the error classes behind the process exit codes.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use config::{BackendSpec, Overrides, PipelineConfig};
pub use error::CliError;
pub use pipeline::{Pipeline, RunOutcome};
