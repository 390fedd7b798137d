//! Task-IL, Class-IL and Data-IL task sequences.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SplitDataset;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioMode {
    TaskIl,
    ClassIl,
    DataIl,
}

impl ScenarioMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioMode::TaskIl => "task_il",
            ScenarioMode::ClassIl => "class_il",
            ScenarioMode::DataIl => "data_il",
        }
    }
}

impl std::fmt::Display for ScenarioMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// 1-based.
    pub task_id: usize,
    pub class_set: Vec<u32>,
    pub mode: ScenarioMode,
    /// When false, trainers must not read labels. They are still carried for
    /// evaluation-memory construction and scoring.
    pub supervised: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub spec: TaskSpec,
    /// Indices into the train split, ascending.
    pub train: Vec<usize>,
    /// Indices into the test split, ascending.
    pub test: Vec<usize>,
}

/// An ordered list of tasks. Serializes to the JSON manifest that pins the
/// split for reproduction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSequence {
    pub sequence_name: String,
    pub dataset: String,
    pub mode: ScenarioMode,
    pub seed: u64,
    pub class_order: Vec<u32>,
    pub tasks: Vec<Task>,
    /// Size of the full test split; Data-IL evaluation always uses all of it.
    pub test_size: usize,
}

pub fn build_class_il(data: &SplitDataset, task_sizes: &[usize], seed: u64) -> Result<TaskSequence> {
    build_disjoint(data, task_sizes, seed, ScenarioMode::ClassIl)
}

/// Same partition as [`build_class_il`]; the mode tag selects per-task heads
/// and task-aware evaluation downstream.
pub fn build_task_il(data: &SplitDataset, task_sizes: &[usize], seed: u64) -> Result<TaskSequence> {
    build_disjoint(data, task_sizes, seed, ScenarioMode::TaskIl)
}

fn build_disjoint(
    data: &SplitDataset,
    task_sizes: &[usize],
    seed: u64,
    mode: ScenarioMode,
) -> Result<TaskSequence> {
    if task_sizes.is_empty() {
        return Err(Error::config("task_sizes is empty"));
    }
    if let Some(t) = task_sizes.iter().position(|&s| s == 0) {
        return Err(Error::config(format!("task {} has no classes", t + 1)));
    }
    let total: usize = task_sizes.iter().sum();
    if total > data.num_classes() {
        return Err(Error::config(format!(
            "task sizes request {total} classes but the dataset has {}",
            data.num_classes()
        )));
    }
    let mut class_order: Vec<u32> = (0..data.num_classes() as u32).collect();
    class_order.shuffle(&mut rng_from_seed(seed));

    let mut owner = vec![None; data.num_classes()];
    let mut tasks = Vec::with_capacity(task_sizes.len());
    let mut start = 0;
    for (t, &size) in task_sizes.iter().enumerate() {
        let class_set = class_order[start..start + size].to_vec();
        for &c in &class_set {
            owner[c as usize] = Some(t);
        }
        start += size;
        tasks.push(Task {
            spec: TaskSpec { task_id: t + 1, class_set, mode, supervised: true },
            train: Vec::new(),
            test: Vec::new(),
        });
    }
    for (i, &l) in data.train.labels().iter().enumerate() {
        if let Some(t) = owner[l as usize] {
            tasks[t].train.push(i);
        }
    }
    for (i, &l) in data.test.labels().iter().enumerate() {
        if let Some(t) = owner[l as usize] {
            tasks[t].test.push(i);
        }
    }
    Ok(TaskSequence {
        sequence_name: format!("{}-Tasks", task_sizes.len()),
        dataset: data.name().to_string(),
        mode,
        seed,
        class_order,
        tasks,
        test_size: data.test.len(),
    })
}

/// Splits every class's training examples evenly across `num_tasks` tasks.
/// Per-class per-task counts differ by at most one; the task receiving the
/// remainder rotates with the class so task totals stay balanced too.
pub fn build_data_il(data: &SplitDataset, num_tasks: usize, seed: u64) -> Result<TaskSequence> {
    if num_tasks == 0 {
        return Err(Error::config("num_tasks must be at least 1"));
    }
    let by_class = data.train.indices_by_class();
    if let Some((c, v)) = by_class.iter().enumerate().find(|(_, v)| v.len() < num_tasks) {
        return Err(Error::config(format!(
            "class {c} has {} training examples, fewer than {num_tasks} tasks",
            v.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let all: Vec<u32> = (0..data.num_classes() as u32).collect();
    let mut tasks: Vec<Task> = (0..num_tasks)
        .map(|t| Task {
            spec: TaskSpec {
                task_id: t + 1,
                class_set: all.clone(),
                mode: ScenarioMode::DataIl,
                supervised: true,
            },
            train: Vec::new(),
            test: (0..data.test.len()).collect(),
        })
        .collect();
    for (c, mut idx) in by_class.into_iter().enumerate() {
        idx.shuffle(&mut rng);
        let base = idx.len() / num_tasks;
        let extra = idx.len() % num_tasks;
        let mut pos = 0;
        for j in 0..num_tasks {
            let t = (c + j) % num_tasks;
            let n = base + usize::from(j < extra);
            tasks[t].train.extend_from_slice(&idx[pos..pos + n]);
            pos += n;
        }
    }
    for t in &mut tasks {
        t.train.sort_unstable();
    }
    Ok(TaskSequence {
        sequence_name: format!("{num_tasks}-Tasks"),
        dataset: data.name().to_string(),
        mode: ScenarioMode::DataIl,
        seed,
        class_order: all,
        tasks,
        test_size: data.test.len(),
    })
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Task `t`, 1-based.
    pub fn task(&self, t: usize) -> Result<&Task> {
        if t == 0 || t > self.tasks.len() {
            return Err(Error::argument(format!("task {t} outside 1..={}", self.tasks.len())));
        }
        Ok(&self.tasks[t - 1])
    }

    /// Marks every task supervised or unsupervised.
    pub fn with_supervision(mut self, supervised: bool) -> Self {
        for t in &mut self.tasks {
            t.spec.supervised = supervised;
        }
        self
    }

    /// Test indices for evaluation after task `t`: the union of test splits
    /// 1..=t, or the whole test split under Data-IL.
    pub fn cumulative_test_set(&self, t: usize) -> Result<Vec<usize>> {
        self.task(t)?;
        if self.mode == ScenarioMode::DataIl {
            return Ok((0..self.test_size).collect());
        }
        let mut out: Vec<usize> = self.tasks[..t].iter().flat_map(|k| k.test.iter().copied()).collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Union of train indices of tasks 1..=t.
    pub fn cumulative_train_set(&self, t: usize) -> Result<Vec<usize>> {
        self.task(t)?;
        let mut out: Vec<usize> = self.tasks[..t].iter().flat_map(|k| k.train.iter().copied()).collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Classes seen up to and including task `t`, in arrival order.
    pub fn seen_classes(&self, t: usize) -> Result<Vec<u32>> {
        self.task(t)?;
        let mut seen = Vec::new();
        for task in &self.tasks[..t] {
            for &c in &task.spec.class_set {
                if !seen.contains(&c) {
                    seen.push(c);
                }
            }
        }
        Ok(seen)
    }

    /// Class → owning task (1-based). Empty for Data-IL, where every task owns every class.
    pub fn class_to_task(&self) -> BTreeMap<u32, usize> {
        if self.mode == ScenarioMode::DataIl {
            return BTreeMap::new();
        }
        self.tasks
            .iter()
            .flat_map(|t| t.spec.class_set.iter().map(move |&c| (c, t.spec.task_id)))
            .collect()
    }

    pub fn to_manifest_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_manifest_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
