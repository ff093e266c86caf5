//! Configuration, experiment runners and result files for the `risfuse` binary.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{Experiment, ExperimentConfig, OutputFormat, TrialSettings};
pub use experiments::{
    optimize_only, run, run_pd_vs_n, run_pd_vs_rician, run_roc, DesignRecord, ResultRow, ResultTable,
};
pub use output::{emit_results, read_json, write_csv, ResultDocument, CSV_COLUMNS};
