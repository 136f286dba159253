//! Experiment orchestration for the `coldpost` library: configuration
//! documents, parallel temperature sweeps, run manifests and reports.

pub mod config;
pub mod report;
pub mod run;

pub use config::{default_temperature_grid, ExperimentConfig, ExperimentKind};
pub use report::emit_report;
pub use run::{run_experiment, RunManifest, RunOptions, RunOutcome};
