//! Data ingestion, Monte Carlo experiments, density estimates and reports.

pub mod experiment;
pub mod ingest;
pub mod kde;
pub mod report;

pub use experiment::{run_experiment, ExperimentSpec};
pub use ingest::{export_csv, ingest_csv, ColumnMap};
pub use kde::{bandwidth, kde};
