//! Experiment configuration, study runner, reports and the verify suite.

pub mod config;
pub mod report;
pub mod runner;
pub mod snapshot;
pub mod verify;

pub use config::{ExperimentConfig, StudyKind};
pub use report::{Check, RunReport, Status, Table};
pub use runner::{resolve_threads, run, sample_field, Threads};
pub use verify::{checks_for, verify_dimensions, VerifyOptions, INVARIANTS};
