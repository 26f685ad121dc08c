//! Experiment orchestration for the level-set percolation lab: configuration,
//! seeded parallel replicas, sweeps and output files.

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;

pub use config::{ConfigOverrides, ExperimentConfig, ExperimentKind, Thresholds};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, ExperimentResult, ReplicaRow, Summary};
pub use gffperc_core::seed::derive_seed;
pub use output::{read_replicas_csv, run_and_write, sweep, write_outputs};
