use serde::{Deserialize, Serialize};

use crate::data::ScenarioMode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Ce,
    Supcon,
    Moco,
}

impl Objective {
    pub fn is_contrastive(self) -> bool {
        !matches!(self, Objective::Ce)
    }

    pub fn uses_labels(self) -> bool {
        !matches!(self, Objective::Moco)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    None,
    Mas,
    LwfKd,
    Ird,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierStrategy {
    Standard,
    Ssil,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub epochs: usize,
    /// Current-task examples per step.
    pub batch_size: usize,
    /// Replayed examples per current example. Memory rows are interleaved
    /// into every batch so the per-epoch total stays within one sample of
    /// `replay_ratio × current`.
    pub replay_ratio: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Cosine decay to zero over the task's steps; constant otherwise.
    pub cosine: bool,
    pub lambda_mas: f64,
    /// `Ω_t = Ω_{t−1} + Ω_new` when true, `Ω_new` otherwise.
    pub mas_accumulate: bool,
    /// Examples of the finished task used to estimate Ω.
    pub mas_samples: usize,
    pub kd_temperature: f64,
    pub kd_lambda: f64,
    pub ird_tau_current: f64,
    pub ird_tau_past: f64,
    pub ird_lambda: f64,
    pub supcon_temperature: f64,
    pub moco_temperature: f64,
    pub moco_momentum: f64,
    pub moco_queue: usize,
    pub projection_hidden: usize,
    pub projection_dim: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            replay_ratio: 1.0,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            cosine: true,
            lambda_mas: 1.0,
            mas_accumulate: true,
            mas_samples: 128,
            kd_temperature: 2.0,
            kd_lambda: 1.0,
            ird_tau_current: 0.2,
            ird_tau_past: 0.01,
            ird_lambda: 1.0,
            supcon_temperature: 0.1,
            moco_temperature: 0.2,
            moco_momentum: 0.99,
            moco_queue: 256,
            projection_hidden: 64,
            projection_dim: 32,
        }
    }
}

/// Objective, regularizer and classifier strategy for every task of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub objective: Objective,
    #[serde(default = "default_regularizer")]
    pub regularizer: Regularizer,
    #[serde(default = "default_strategy")]
    pub classifier_strategy: ClassifierStrategy,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
}

fn default_regularizer() -> Regularizer {
    Regularizer::None
}

fn default_strategy() -> ClassifierStrategy {
    ClassifierStrategy::Standard
}

impl AlgorithmSpec {
    pub fn new(objective: Objective) -> Self {
        Self {
            objective,
            regularizer: Regularizer::None,
            classifier_strategy: ClassifierStrategy::Standard,
            hyperparameters: Hyperparameters::default(),
        }
    }

    pub fn with_regularizer(mut self, r: Regularizer) -> Self {
        self.regularizer = r;
        self
    }

    pub fn with_strategy(mut self, s: ClassifierStrategy) -> Self {
        self.classifier_strategy = s;
        self
    }

    /// Short label such as `FT(CE)`, `MAS(SupCon)` or `SS-IL`.
    pub fn label(&self) -> String {
        let obj = match self.objective {
            Objective::Ce => "CE",
            Objective::Supcon => "SupCon",
            Objective::Moco => "MoCo",
        };
        if self.classifier_strategy == ClassifierStrategy::Ssil {
            return "SS-IL".into();
        }
        let method = match self.regularizer {
            Regularizer::None => "FT",
            Regularizer::Mas => "MAS",
            Regularizer::LwfKd => "LwF",
            Regularizer::Ird => "IRD",
        };
        format!("{method}({obj})")
    }

    /// Checks the combination against the scenario it will run in.
    pub fn validate(&self, mode: ScenarioMode, supervised: bool, memory_size: usize) -> Result<()> {
        let hp = &self.hyperparameters;
        if self.classifier_strategy == ClassifierStrategy::Ssil {
            if self.objective != Objective::Ce {
                return Err(Error::config("ssil requires objective = ce"));
            }
            if mode != ScenarioMode::ClassIl {
                return Err(Error::config(format!("ssil needs a single class-incremental head, not {mode}")));
            }
            if memory_size == 0 {
                return Err(Error::config("ssil requires an exemplar memory (memory_size > 0)"));
            }
        }
        match self.regularizer {
            Regularizer::Ird if self.objective != Objective::Supcon => {
                return Err(Error::config("ird requires objective = supcon"))
            }
            Regularizer::LwfKd if self.objective != Objective::Ce => {
                return Err(Error::config("lwf_kd requires objective = ce"))
            }
            _ => {}
        }
        if self.objective.uses_labels() && !supervised {
            return Err(Error::config(format!("objective {:?} needs labels but the scenario is unsupervised", self.objective)));
        }
        let positive = [
            ("lr", hp.lr),
            ("kd_temperature", hp.kd_temperature),
            ("ird_tau_current", hp.ird_tau_current),
            ("ird_tau_past", hp.ird_tau_past),
            ("supcon_temperature", hp.supcon_temperature),
            ("moco_temperature", hp.moco_temperature),
        ];
        for (k, v) in positive {
            if !(v > 0.0) {
                return Err(Error::config(format!("{k} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("replay_ratio", hp.replay_ratio),
            ("weight_decay", hp.weight_decay),
            ("lambda_mas", hp.lambda_mas),
            ("kd_lambda", hp.kd_lambda),
            ("ird_lambda", hp.ird_lambda),
        ];
        for (k, v) in nonneg {
            if !(v >= 0.0) {
                return Err(Error::config(format!("{k} must be non-negative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&hp.momentum) {
            return Err(Error::config("momentum must be in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&hp.moco_momentum) {
            return Err(Error::config("moco_momentum must be in [0, 1]"));
        }
        if hp.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        if self.objective == Objective::Moco && hp.moco_queue == 0 {
            return Err(Error::config("moco_queue must be positive"));
        }
        if self.objective.is_contrastive() && (hp.projection_hidden == 0 || hp.projection_dim == 0) {
            return Err(Error::config("projection sizes must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incompatible_combinations() {
        let ssil = AlgorithmSpec::new(Objective::Ce).with_strategy(ClassifierStrategy::Ssil);
        assert!(matches!(ssil.validate(ScenarioMode::DataIl, true, 100), Err(Error::Config(_))));
        assert!(matches!(ssil.validate(ScenarioMode::ClassIl, true, 0), Err(Error::Config(_))));
        ssil.validate(ScenarioMode::ClassIl, true, 100).unwrap();
        let ird = AlgorithmSpec::new(Objective::Ce).with_regularizer(Regularizer::Ird);
        assert!(matches!(ird.validate(ScenarioMode::ClassIl, true, 0), Err(Error::Config(_))));
        AlgorithmSpec::new(Objective::Supcon)
            .with_regularizer(Regularizer::Ird)
            .validate(ScenarioMode::ClassIl, true, 0)
            .unwrap();
        assert!(matches!(
            AlgorithmSpec::new(Objective::Ce).validate(ScenarioMode::ClassIl, false, 0),
            Err(Error::Config(_))
        ));
        AlgorithmSpec::new(Objective::Moco).validate(ScenarioMode::ClassIl, false, 0).unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let spec = AlgorithmSpec::new(Objective::Supcon).with_regularizer(Regularizer::Mas);
        let text = toml::to_string(&spec).unwrap();
        let back: AlgorithmSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let short: AlgorithmSpec = toml::from_str("objective = \"moco\"").unwrap();
        assert_eq!(short, AlgorithmSpec::new(Objective::Moco));
        assert_eq!(AlgorithmSpec::new(Objective::Ce).label(), "FT(CE)");
    }
}
