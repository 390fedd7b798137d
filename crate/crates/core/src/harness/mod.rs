//! Experiment configuration, resumable runs and report emission.

mod config;
mod report;
mod run;

pub use config::{
    DatasetConfig, DownstreamConfig, ExperimentConfig, LearnerKind, MemoryConfig, ScenarioConfig, DATA_ROOT_ENV,
};
pub use report::{accuracy_series, emit_report, load_ledgers, plot_accuracy, ReportSummary, Series};
pub use run::{
    algorithm_label, metrics_csv, run_experiment, RunLedger, RunOptions, TaskRecord, CONFIG_FILE, LEDGER_FILE,
    CHECKPOINT_STEM, LOSSES_FILE, MEMORY_E_FILE, MEMORY_O_FILE, METRICS_FILE,
};
