use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::AlgorithmSpec;
use crate::data::synthetic::{generate, GlyphConfig};
use crate::data::{build_class_il, build_data_il, build_task_il, load_image_folder, AugmentConfig, ScenarioMode, SplitDataset, TaskSequence};
use crate::error::{Error, Result};
use crate::eval::{ProbeConfig, TransferConfig};
use crate::model::EncoderArch;

/// When set, image-folder datasets are read from `$CLREP_DATA_ROOT/<id>`
/// instead of their configured `root`.
pub const DATA_ROOT_ENV: &str = "CLREP_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    /// One model trained task after task.
    #[default]
    Continual,
    /// Retrained from scratch on every task seen so far.
    Joint,
    /// Retrained from scratch on the exemplar memory only.
    Gdumb,
}

/// A dataset read from an image folder (`root`) or generated (`synthetic`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<GlyphConfig>,
}

impl DatasetConfig {
    pub fn synthetic(id: &str, cfg: GlyphConfig) -> Self {
        Self { id: id.into(), root: None, synthetic: Some(cfg) }
    }

    pub fn load(&self) -> Result<SplitDataset> {
        let env_root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
        match (&self.root, &self.synthetic, env_root) {
            (Some(_), Some(_), _) => Err(Error::config(format!("dataset `{}` sets both root and synthetic", self.id))),
            (Some(_), None, Some(base)) => load_image_folder(&base.join(&self.id), &self.id),
            (Some(root), None, None) => load_image_folder(root, &self.id),
            (None, Some(g), _) => generate(&GlyphConfig { name: self.id.clone(), ..g.clone() }),
            (None, None, _) => Err(Error::config(format!("dataset `{}` needs a root or a synthetic section", self.id))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: ScenarioMode,
    /// Classes per task (task/class-incremental).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_sizes: Option<Vec<usize>>,
    /// Number of tasks; for class/task-incremental the classes are split evenly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_tasks: Option<usize>,
    /// Split seed; defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "yes")]
    pub supervised: bool,
}

fn yes() -> bool {
    true
}

impl ScenarioConfig {
    pub fn build(&self, data: &SplitDataset, run_seed: u64) -> Result<TaskSequence> {
        let seed = self.seed.unwrap_or(run_seed);
        let seq = match self.mode {
            ScenarioMode::DataIl => {
                if self.task_sizes.is_some() {
                    return Err(Error::config("data_il takes num_tasks, not task_sizes"));
                }
                let n = self.num_tasks.ok_or_else(|| Error::config("data_il needs num_tasks"))?;
                build_data_il(data, n, seed)?
            }
            mode => {
                let sizes = match (&self.task_sizes, self.num_tasks) {
                    (Some(s), None) => s.clone(),
                    (None, Some(n)) => {
                        let k = data.num_classes();
                        if n == 0 || k % n != 0 {
                            return Err(Error::config(format!("{k} classes do not split evenly into {n} tasks")));
                        }
                        vec![k / n; n]
                    }
                    (Some(_), Some(_)) => return Err(Error::config("give task_sizes or num_tasks, not both")),
                    (None, None) => return Err(Error::config("scenario needs task_sizes or num_tasks")),
                };
                if mode == ScenarioMode::TaskIl {
                    build_task_il(data, &sizes, seed)?
                } else {
                    build_class_il(data, &sizes, seed)?
                }
            }
        };
        Ok(seq.with_supervision(self.supervised))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    /// `|M_e|`, the replay memory capacity. 0 disables replay.
    pub train_size: usize,
    /// Per-class quota of the evaluation memory `M_o`.
    pub eval_quota: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self { train_size: 0, eval_quota: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownstreamConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<GlyphConfig>,
    /// Evaluate after every task instead of only after the last one.
    #[serde(default)]
    pub every_task: bool,
}

impl DownstreamConfig {
    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig { id: self.id.clone(), root: self.root.clone(), synthetic: self.synthetic.clone() }
    }
}

/// Everything that determines a run. Serialized verbatim into the run
/// directory; rerunning from that file reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub learner: LearnerKind,
    /// Encoder preset: `resnet_tiny`, `resnet_compact` or `resnet18`.
    #[serde(default = "default_arch")]
    pub architecture: String,
    pub dataset: DatasetConfig,
    pub scenario: ScenarioConfig,
    pub algorithm: AlgorithmSpec,
    #[serde(default)]
    pub memory: MemoryConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub transfer: TransferConfig,
    #[serde(default)]
    pub downstream: Vec<DownstreamConfig>,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn default_arch() -> String {
    "resnet_tiny".into()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }

    pub fn architecture(&self, in_channels: usize) -> Result<EncoderArch> {
        EncoderArch::preset(&self.architecture, in_channels)
    }

    /// The desk-scale proxy: ten 12×12 glyph classes split into five
    /// class-incremental tasks of two classes, a tiny residual encoder and
    /// FT(CE) without replay. Adjust the returned value for other cells of a grid.
    pub fn desk_proxy(run_id: &str, output_dir: &Path, seed: u64) -> Self {
        Self {
            run_id: run_id.into(),
            output_dir: output_dir.to_path_buf(),
            seed,
            learner: LearnerKind::Continual,
            architecture: default_arch(),
            dataset: DatasetConfig::synthetic("glyphs10", GlyphConfig::default()),
            scenario: ScenarioConfig {
                mode: ScenarioMode::ClassIl,
                task_sizes: None,
                num_tasks: Some(5),
                seed: None,
                supervised: true,
            },
            algorithm: AlgorithmSpec::new(crate::algorithms::Objective::Ce),
            memory: MemoryConfig::default(),
            probe: ProbeConfig::default(),
            augment: AugmentConfig::default(),
            transfer: TransferConfig::default(),
            downstream: Vec::new(),
        }
    }

    /// Static checks that need no data.
    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id.starts_with('.') {
            return Err(Error::config(format!("run_id `{}` must be a plain directory name", self.run_id)));
        }
        if self.memory.eval_quota == 0 {
            return Err(Error::config("eval_quota must be positive"));
        }
        if self.learner == LearnerKind::Gdumb && self.memory.train_size == 0 {
            return Err(Error::config("the gdumb learner needs memory.train_size > 0"));
        }
        if self.learner == LearnerKind::Gdumb && !self.scenario.supervised {
            return Err(Error::config("the gdumb learner needs labels"));
        }
        self.algorithm.validate(self.scenario.mode, self.scenario.supervised, self.memory.train_size)?;
        for d in &self.downstream {
            if d.id == self.dataset.id {
                return Err(Error::config(format!("downstream dataset `{}` is the continual-learning dataset", d.id)));
            }
        }
        Ok(())
    }

    /// `key: old -> new` lines for every top-level TOML entry that differs.
    pub fn diff(&self, other: &Self) -> Result<Vec<String>> {
        let a: toml::Table = toml::from_str(&self.to_toml()?)?;
        let b: toml::Table = toml::from_str(&other.to_toml()?)?;
        let mut out = Vec::new();
        diff_tables("", &a, &b, &mut out);
        Ok(out)
    }
}

fn diff_tables(prefix: &str, a: &toml::Table, b: &toml::Table, out: &mut Vec<String>) {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    for k in keys {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (a.get(k), b.get(k)) {
            (Some(toml::Value::Table(x)), Some(toml::Value::Table(y))) => diff_tables(&path, x, y, out),
            (x, y) if x != y => out.push(format!(
                "{path}: {} -> {}",
                x.map(|v| v.to_string()).unwrap_or_else(|| "<unset>".into()),
                y.map(|v| v.to_string()).unwrap_or_else(|| "<unset>".into())
            )),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::Objective;

    const SAMPLE: &str = r#"
run_id = "ft_ce"
seed = 3

[dataset]
id = "glyphs"
[dataset.synthetic]
num_classes = 4
train_per_class = 5

[scenario]
mode = "class_il"
num_tasks = 2

[algorithm]
objective = "ce"
[algorithm.hyperparameters]
epochs = 1

[memory]
train_size = 10

[[downstream]]
id = "down"
[downstream.synthetic]
family_seed = 9
"#;

    #[test]
    fn round_trips_losslessly() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.algorithm.objective, Objective::Ce);
        assert_eq!(cfg.memory.eval_quota, 20);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.diff(&back).unwrap().is_empty());
    }

    #[test]
    fn diff_names_changed_keys() {
        let a = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let mut b = a.clone();
        b.memory.train_size = 50;
        b.algorithm.hyperparameters.lr = 0.1;
        let d = b.diff(&a).unwrap();
        assert_eq!(d.len(), 2, "{d:?}");
        assert!(d.iter().any(|l| l.starts_with("memory.train_size: 50 -> 10")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(ExperimentConfig::from_toml(&format!("{SAMPLE}\nbogus = 1")), Err(Error::TomlDe(_))));
    }

    #[test]
    fn uneven_split_is_a_config_error() {
        let mut cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        cfg.scenario.num_tasks = Some(3);
        let data = cfg.dataset.load().unwrap();
        assert!(matches!(cfg.scenario.build(&data, 0), Err(Error::Config(_))));
    }
}
