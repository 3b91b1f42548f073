//! Workload ingestion, synthetic data, experiment runs and reports.

pub mod check;
pub mod experiment;
pub mod io;
pub mod synth;

pub use check::{run_checks, CheckOutcome};
pub use experiment::{
    compute_metrics, recall_at_k, run_experiment, Budget, ExperimentConfig, QueryMetrics,
    QueryReport, RunReport,
};
pub use io::{load_matrix, write_matrix, Shape};
pub use synth::{gen_synthetic, gen_synthetic_with, SynthParams, Workload};
