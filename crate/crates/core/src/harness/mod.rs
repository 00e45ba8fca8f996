//! Experiment orchestration: rate tables, realizable runs, dataset ingestion
//! and result files.

pub mod config;
pub mod emit;
pub mod fit;
pub mod ingest;
pub mod realizable;
pub mod table;

pub use config::{DatasetChoice, ExperimentConfig, ModelChoice, ThetaChoice};
pub use emit::{Format, Sidecar, TableRecord};
pub use fit::{fit_exponential_rate, RateFit};
pub use ingest::{ingest_dataset, ingest_reader, EmpiricalModel};
pub use realizable::{run_realizable, RealizableResult};
pub use table::{mean_coupled_trajectory, run_table, run_table_with, MeanTrajectory, RateRow, TableOptions};
