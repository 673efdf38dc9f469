//! Experiment harness: configuration, synthetic models, metrics and the
//! artifact-writing driver behind the `lrfwi` binary.

pub mod config;
pub mod error;
pub mod experiment;
pub mod models;

pub use config::{ExperimentConfig, PipelineChoice};
pub use error::{CliError, Result};
pub use experiment::{build_problem, run_experiment, run_in_memory, Problem, Report};
pub use lrfwi_core::joint::{model_error, snr_db};
pub use models::{make_initial, make_truth};
