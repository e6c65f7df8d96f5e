//! Run configuration, checkpoints, the experiment driver and the CLI.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod experiment;
pub mod report;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{EvalConfig, RunConfig, OUTPUT_ENV};
pub use experiment::{run_experiment, run_experiment_in, ExperimentSummary, Failure, Reference};
pub use report::{MetricRecord, ResultRow, TEACHER_DDIM};
