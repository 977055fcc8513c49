//! Experiment orchestration for `batchrl`: batch generation, offline
//! training sweeps over seeds, benchmark suites and plot data.

mod config;
mod data;
mod error;
mod experiment;
pub mod metrics;
mod plot;
mod suite;

pub use config::{ExperimentConfig, GenerationConfig, SuiteConfig};
pub use data::{
    batch_from_policy, behavioral_policy, check_dataset, generate_dataset, load_behavioral,
    save_behavioral, BEHAVIORAL_FILE,
};
pub use error::{HarnessError, Result};
pub use experiment::{
    evaluate, run_experiment, run_experiment_on, ExperimentReport, SeedReport, DATASET_FILE,
    MANIFEST_FILE, RETURN_WINDOW, SUMMARY_FILE,
};
pub use plot::{emit_plot_data, plot_rows, PlotRow, PLOT_DIR};
pub use suite::{
    oracle_return, run_benchmark_suite, EnvReport, SuiteReport, SuiteRow, BEHAVIORAL_ROW,
    ORACLE_ROW, SUITE_SUMMARY_FILE,
};
