//! Representation evaluation: output-layer retraining on the evaluation
//! memory, accuracy with and without task identity, task-confusion
//! profiles and downstream transfer.

mod metrics;
mod probe;
mod transfer;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use metrics::{bias_profile, bias_profile_from_predictions, embed_all, evaluate_accuracy, predict};
pub use probe::{linear_probe, retrain_output_layer, ProbeConfig};
pub use transfer::{downstream_transfer, TransferConfig};

/// Metrics of one run after task `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_id: String,
    pub task_index: usize,
    pub scenario: String,
    pub algorithm: String,
    pub memory_size: usize,
    pub seed: u64,
    /// Accuracy of the continually trained classifier; absent for
    /// objectives without one.
    pub raw_accuracy: Option<f64>,
    /// Accuracy after retraining the output layer on the evaluation memory.
    pub gd_accuracy: f64,
    /// `gd_accuracy − raw_accuracy`.
    pub bias_gap: Option<f64>,
    /// Task-IL accuracy of the raw classifier (task identity supplied).
    pub task_il_accuracy: Option<f64>,
    /// Task confusion of the raw classifier.
    pub task_confusion: Option<Vec<Vec<f64>>>,
    /// Task confusion after output-layer retraining.
    pub task_confusion_gd: Vec<Vec<f64>>,
    pub downstream: BTreeMap<String, f64>,
    /// Encoder checksum at evaluation time, identical before and after every
    /// evaluation step.
    pub encoder_checksum: String,
}
