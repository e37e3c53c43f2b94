//! Files, configuration, experiment running and reporting on top of
//! `forkmerge-core`.

pub mod config;
pub mod csv_io;
pub mod pool;
pub mod records;
pub mod report;
pub mod runner;
pub mod sweeps;

pub use config::{ExperimentConfig, Method};
pub use pool::ThreadPool;
pub use records::ResultRecord;
pub use runner::{run_experiment, RunOutput};
