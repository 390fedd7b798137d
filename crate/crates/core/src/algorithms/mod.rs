//! Training objectives, regularizers and per-task trainers.

mod algorithm;
pub mod losses;
pub mod mas;
mod optim;
mod trainer;

pub use algorithm::{AlgorithmSpec, ClassifierStrategy, Hyperparameters, Objective, Regularizer};
pub use losses::{loss_ce, loss_infonce, loss_ird, loss_lwf_kd, loss_ssil, loss_supcon, SsilBatch, SsilLoss};
pub use mas::{accumulate_importance, mas_importance, mas_penalty, Importance};
pub use optim::{cosine_lr, Sgd};
pub use trainer::{gdumb_learner, train_joint, train_task, LossRecord, ModelState, RegularizerState, TaskData, TrainEnv, TrainLog};
