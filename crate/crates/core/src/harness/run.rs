use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::Device;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LearnerKind};
use crate::algorithms::{gdumb_learner, train_joint, train_task, LossRecord, ModelState, RegularizerState, TaskData, TrainEnv, TrainLog};
use crate::data::{ScenarioMode, SplitDataset, TaskSequence, TaskView};
use crate::error::{Error, Result};
use crate::eval::{bias_profile, downstream_transfer, evaluate_accuracy, retrain_output_layer, EvalReport};
use crate::memory::ExemplarMemory;
use crate::model::{load_checkpoint, save_checkpoint, ClassifierHead, Model};
use crate::rng::{streams, SeedStreams};

pub const CONFIG_FILE: &str = "config.toml";
pub const LEDGER_FILE: &str = "ledger.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LOSSES_FILE: &str = "losses.csv";
pub const SCENARIO_FILE: &str = "scenario.json";
pub const CHECKPOINT_STEM: &str = "checkpoint";
pub const REPORT_FILE: &str = "report.json";
pub const TASK_LOSSES_FILE: &str = "losses.csv";
pub const MEMORY_E_FILE: &str = "memory_e.json";
pub const MEMORY_O_FILE: &str = "memory_o.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: usize,
    /// Relative to the run directory.
    pub dir: PathBuf,
    pub steps: usize,
    pub wall_clock_secs: f64,
    pub encoder_checksum: String,
}

/// On-disk progress of one run. `ledger.json` is rewritten only after a
/// task's directory has been committed, so it never points at partial work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub run_id: String,
    pub num_tasks: usize,
    pub tasks: Vec<TaskRecord>,
    pub complete: bool,
    #[serde(skip)]
    pub run_dir: PathBuf,
    #[serde(skip)]
    pub reports: Vec<EvalReport>,
}

impl RunLedger {
    /// Reads `ledger.json` and every committed report of a run directory.
    pub fn load(run_dir: &Path) -> Result<Self> {
        let mut ledger: RunLedger = serde_json::from_str(&fs::read_to_string(run_dir.join(LEDGER_FILE))?)?;
        ledger.run_dir = run_dir.to_path_buf();
        ledger.reports = ledger
            .tasks
            .iter()
            .map(|r| Ok(serde_json::from_str(&fs::read_to_string(run_dir.join(&r.dir).join(REPORT_FILE))?)?))
            .collect::<Result<_>>()?;
        Ok(ledger)
    }

    pub fn last_task(&self) -> usize {
        self.tasks.last().map(|r| r.task).unwrap_or(0)
    }

    pub fn final_report(&self) -> Option<&EvalReport> {
        self.reports.last()
    }

    pub fn task_dir(&self, t: usize) -> PathBuf {
        self.run_dir.join(task_dir_name(t))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Continue from the last committed task instead of refusing to touch an existing run.
    pub resume: bool,
    /// Return right after committing this task, as if the process had died.
    pub stop_after: Option<usize>,
}

fn task_dir_name(t: usize) -> PathBuf {
    PathBuf::from("tasks").join(format!("task_{t:03}"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn stream_seeds(s: &SeedStreams, t: usize) -> BTreeMap<String, u64> {
    [
        streams::INIT,
        streams::BATCHING,
        streams::AUGMENT,
        streams::REPLAY,
        streams::MEMORY,
        streams::PROBE,
        streams::TRANSFER,
    ]
    .into_iter()
    .map(|n| (n.to_string(), s.seed(n, t as u64)))
    .collect()
}

struct Loaded {
    data: SplitDataset,
    seq: TaskSequence,
    downstream: Vec<SplitDataset>,
}

fn load_inputs(cfg: &ExperimentConfig) -> Result<Loaded> {
    let data = cfg.dataset.load()?;
    let seq = cfg.scenario.build(&data, cfg.seed)?;
    let downstream = cfg.downstream.iter().map(|d| d.dataset().load()).collect::<Result<Vec<_>>>()?;
    Ok(Loaded { data, seq, downstream })
}

/// Runs (or resumes) every task of the configured experiment.
///
/// Per task: train → update `M_e` and `M_o` → checkpoint → retrain the output
/// layer on `M_o` → evaluate raw and retrained accuracy and task confusion →
/// optional downstream transfer. Each task is written into a scratch
/// directory that is renamed into place, then the ledger is updated.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunLedger> {
    cfg.validate()?;
    let run_dir = cfg.run_dir();
    let ledger_path = run_dir.join(LEDGER_FILE);
    let device = Device::Cpu;
    let streams = SeedStreams::new(cfg.seed);

    let existing = if ledger_path.exists() {
        if !opts.resume {
            return Err(Error::config(format!(
                "run `{}` already exists in {}; pass --resume to continue it",
                cfg.run_id,
                cfg.output_dir.display()
            )));
        }
        let stored = ExperimentConfig::load(&run_dir.join(CONFIG_FILE))?;
        let diff = stored.diff(cfg)?;
        if !diff.is_empty() {
            return Err(Error::ResumeMismatch(diff.join("\n")));
        }
        Some(RunLedger::load(&run_dir)?)
    } else {
        None
    };

    let inputs = load_inputs(cfg)?;
    let (data, seq) = (&inputs.data, &inputs.seq);
    let num_tasks = seq.len();
    let arch = cfg.architecture(data.shape().channels)?;
    let spec = &cfg.algorithm;
    let env = TrainEnv { augment: &cfg.augment, streams, device: device.clone() };

    fs::create_dir_all(run_dir.join("tasks"))?;
    let mut ledger = match existing {
        Some(l) => l,
        None => {
            write_atomic(&run_dir.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
            write_atomic(&run_dir.join(SCENARIO_FILE), seq.to_manifest_json()?.as_bytes())?;
            RunLedger {
                run_id: cfg.run_id.clone(),
                num_tasks,
                tasks: Vec::new(),
                complete: false,
                run_dir: run_dir.clone(),
                reports: Vec::new(),
            }
        }
    };
    clear_uncommitted(&run_dir, ledger.last_task())?;

    let mut memory_e = ExemplarMemory::capacity_balanced(cfg.memory.train_size, streams.seed(streams::MEMORY, 0))
        .with_num_classes(data.num_classes());
    let mut memory_o = ExemplarMemory::per_class_quota(cfg.memory.eval_quota, streams.seed(streams::EVAL_MEMORY, 0))
        .with_num_classes(data.num_classes());
    let mut state: Option<ModelState> = None;

    let start = ledger.last_task() + 1;
    if start > 1 {
        let dir = ledger.task_dir(start - 1);
        memory_e = ExemplarMemory::from_json(&fs::read_to_string(dir.join(MEMORY_E_FILE))?)?;
        memory_o = ExemplarMemory::from_json(&fs::read_to_string(dir.join(MEMORY_O_FILE))?)?;
        if cfg.learner == LearnerKind::Continual {
            let ck = load_checkpoint(&dir, CHECKPOINT_STEM)?;
            let regularizer = RegularizerState::restore(&ck.model, &ck.extras, spec)?;
            state = Some(ModelState { model: ck.model, contrastive: ck.contrastive, regularizer });
        }
        log::info!("resuming `{}` at task {start}", cfg.run_id);
    }

    for t in start..=num_tasks {
        let clock = Instant::now();
        let task = seq.task(t)?;
        let td = TaskData::from_sequence(seq, &data.train, t)?;

        // train
        let (trained, log): (ModelState, TrainLog) = match cfg.learner {
            LearnerKind::Continual => {
                let mut st = match state.take() {
                    Some(s) => s,
                    None => ModelState::init(arch.clone(), spec, &streams)?,
                };
                let replay = (cfg.memory.train_size > 0).then_some(&memory_e);
                let log = train_task(&mut st, &td, replay, spec, &env)?;
                (st, log)
            }
            LearnerKind::Joint => train_joint(arch.clone(), seq, &data.train, t, spec, &env)?,
            LearnerKind::Gdumb => {
                update_memory_e(&mut memory_e, cfg, &streams, data, &task.train, t)?;
                gdumb_learner(&memory_e, &data.train, task.spec.supervised, arch.clone(), spec, &env)?
            }
        };
        let steps = log.steps;
        // GDumb trains its fresh model as a single task of its own
        let losses: Vec<LossRecord> = log.records.into_iter().map(|r| LossRecord { task: t, ..r }).collect();

        // memories
        if cfg.learner != LearnerKind::Gdumb {
            update_memory_e(&mut memory_e, cfg, &streams, data, &task.train, t)?;
        }
        memory_o.quota_update(&TaskView::labeled(&data.train, &task.train))?;

        // commit directory, filled in scratch space first
        let final_dir = run_dir.join(task_dir_name(t));
        let scratch = final_dir.with_extension("tmp");
        if scratch.exists() {
            fs::remove_dir_all(&scratch)?;
        }
        fs::create_dir_all(&scratch)?;
        save_checkpoint(
            &scratch,
            CHECKPOINT_STEM,
            &trained.model,
            trained.contrastive.as_ref(),
            &trained.regularizer.to_extras(),
            t,
            stream_seeds(&streams, t),
        )?;
        fs::write(scratch.join(MEMORY_E_FILE), memory_e.to_json()?)?;
        fs::write(scratch.join(MEMORY_O_FILE), memory_o.to_json()?)?;
        fs::write(scratch.join(TASK_LOSSES_FILE), loss_csv(&losses))?;

        // evaluate
        let report = evaluate_task(cfg, &inputs, &trained.model, &memory_o, &streams, t, &device)?;
        fs::write(scratch.join(REPORT_FILE), serde_json::to_string_pretty(&report)?)?;
        fs::rename(&scratch, &final_dir)?;

        ledger.tasks.push(TaskRecord {
            task: t,
            dir: task_dir_name(t),
            steps,
            wall_clock_secs: clock.elapsed().as_secs_f64(),
            encoder_checksum: report.encoder_checksum.clone(),
        });
        ledger.reports.push(report);
        ledger.complete = t == num_tasks;
        write_atomic(&ledger_path, serde_json::to_string_pretty(&ledger)?.as_bytes())?;
        rebuild_run_csvs(&ledger)?;
        log::info!("{}: task {t}/{num_tasks} committed", cfg.run_id);

        if cfg.learner == LearnerKind::Continual {
            state = Some(trained);
        }
        if opts.stop_after == Some(t) && t < num_tasks {
            return Ok(ledger);
        }
    }
    Ok(ledger)
}

/// Drops scratch directories and task directories the ledger does not list.
fn clear_uncommitted(run_dir: &Path, last: usize) -> Result<()> {
    let tasks = run_dir.join("tasks");
    for entry in fs::read_dir(&tasks)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let committed = name
            .strip_prefix("task_")
            .and_then(|n| n.parse::<usize>().ok())
            .map(|k| k <= last)
            .unwrap_or(false);
        if !committed {
            log::warn!("removing uncommitted {}", path.display());
            if path.is_dir() {
                fs::remove_dir_all(&path)?;
            } else {
                fs::remove_file(&path)?;
            }
        }
    }
    Ok(())
}

fn update_memory_e(
    memory: &mut ExemplarMemory,
    cfg: &ExperimentConfig,
    streams: &SeedStreams,
    data: &SplitDataset,
    train: &[usize],
    t: usize,
) -> Result<()> {
    if cfg.memory.train_size == 0 {
        return Ok(());
    }
    use rand::seq::SliceRandom;
    let mut order = train.to_vec();
    order.shuffle(&mut streams.rng(streams::MEMORY, t as u64));
    memory.greedy_update(order.iter().map(|&i| data.train.example(i)))
}

fn evaluate_task(
    cfg: &ExperimentConfig,
    inputs: &Loaded,
    model: &Model,
    memory_o: &ExemplarMemory,
    streams: &SeedStreams,
    t: usize,
    device: &Device,
) -> Result<EvalReport> {
    let (data, seq) = (&inputs.data, &inputs.seq);
    let enc = &model.encoder;
    let checksum = enc.checksum()?;
    let test = seq.cumulative_test_set(t)?;
    let owner: BTreeMap<u32, usize> = seq.class_to_task().into_iter().filter(|&(_, k)| k <= t).collect();
    let seen = seq.seen_classes(t)?;
    let masked = (seq.mode == ScenarioMode::TaskIl).then_some(&owner);
    let with_ids = (!owner.is_empty()).then_some(&owner);

    let (raw, task_il, confusion) = match &model.classifier {
        Some(head) => (
            Some(evaluate_accuracy(enc, head, &data.test, &test, masked, device)?),
            with_ids.map(|o| evaluate_accuracy(enc, head, &data.test, &test, Some(o), device)).transpose()?,
            Some(bias_profile(enc, head, &data.test, &test, &owner, t, device)?),
        ),
        None => (None, None, None),
    };

    let mut probe_rng = streams.rng(streams::PROBE, t as u64);
    let probe = retrain_output_layer(enc, memory_o, &data.train, &seen, &cfg.probe, &mut probe_rng, device)?;
    let gd_head = ClassifierHead::Single(probe);
    let gd = evaluate_accuracy(enc, &gd_head, &data.test, &test, masked, device)?;
    let confusion_gd = bias_profile(enc, &gd_head, &data.test, &test, &owner, t, device)?;

    let mut downstream = BTreeMap::new();
    for (k, (dcfg, ds)) in cfg.downstream.iter().zip(&inputs.downstream).enumerate() {
        if dcfg.every_task || t == seq.len() {
            let mut rng = streams.rng(streams::TRANSFER, (t * 1000 + k) as u64);
            let acc = downstream_transfer(enc, ds, data.name(), &cfg.transfer, &cfg.augment, &mut rng, device)?;
            downstream.insert(dcfg.id.clone(), acc);
        }
    }
    if enc.checksum()? != checksum {
        return Err(Error::internal("encoder parameters changed during evaluation"));
    }
    Ok(EvalReport {
        run_id: cfg.run_id.clone(),
        task_index: t,
        scenario: format!("{}/{}/{}", seq.dataset, seq.mode, seq.sequence_name),
        algorithm: algorithm_label(cfg),
        memory_size: cfg.memory.train_size,
        seed: cfg.seed,
        raw_accuracy: raw,
        gd_accuracy: gd,
        bias_gap: raw.map(|r| gd - r),
        task_il_accuracy: task_il,
        task_confusion: confusion,
        task_confusion_gd: confusion_gd,
        downstream,
        encoder_checksum: checksum,
    })
}

pub fn algorithm_label(cfg: &ExperimentConfig) -> String {
    match cfg.learner {
        LearnerKind::Continual => cfg.algorithm.label(),
        LearnerKind::Joint => format!("Joint({})", cfg.algorithm.label().split(['(', ')']).nth(1).unwrap_or("CE")),
        LearnerKind::Gdumb => "GDumb".into(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub(crate) fn last_task_mass(m: &[Vec<f64>]) -> f64 {
    let t = m.len();
    m.iter().map(|row| row[t - 1]).sum::<f64>() / t as f64
}

pub(crate) const METRICS_HEADER: &str =
    "run_id,t,scenario,algorithm,memory_size,seed,raw_acc,gd_acc,bias_gap,task_il_acc,last_task_mass_raw,last_task_mass_gd";

/// One CSV row per report. Downstream accuracies follow as `downstream:<id>` columns.
pub fn metrics_csv(reports: &[EvalReport]) -> String {
    let names: Vec<String> = {
        let mut n: Vec<String> = reports.iter().flat_map(|r| r.downstream.keys().cloned()).collect();
        n.sort();
        n.dedup();
        n
    };
    let mut out = String::from(METRICS_HEADER);
    for n in &names {
        out.push_str(&format!(",downstream:{n}"));
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6},{},{},{},{:.6}",
            r.run_id,
            r.task_index,
            r.scenario,
            r.algorithm,
            r.memory_size,
            r.seed,
            fmt_opt(r.raw_accuracy),
            r.gd_accuracy,
            fmt_opt(r.bias_gap),
            fmt_opt(r.task_il_accuracy),
            fmt_opt(r.task_confusion.as_deref().map(last_task_mass)),
            last_task_mass(&r.task_confusion_gd),
        ));
        for n in &names {
            out.push(',');
            out.push_str(&fmt_opt(r.downstream.get(n).copied()));
        }
        out.push('\n');
    }
    out
}

fn loss_csv(records: &[LossRecord]) -> String {
    let mut out = String::from("step,task,loss_total,loss_main,loss_reg\n");
    for r in records {
        out.push_str(&format!("{},{},{},{},{}\n", r.step, r.task, r.loss_total, r.loss_main, r.loss_reg));
    }
    out
}

/// Regenerates `metrics.csv` and `losses.csv` from the committed task directories.
fn rebuild_run_csvs(ledger: &RunLedger) -> Result<()> {
    write_atomic(&ledger.run_dir.join(METRICS_FILE), metrics_csv(&ledger.reports).as_bytes())?;
    let mut losses = String::from("step,task,loss_total,loss_main,loss_reg\n");
    for r in &ledger.tasks {
        let text = fs::read_to_string(ledger.run_dir.join(&r.dir).join(TASK_LOSSES_FILE))?;
        losses.extend(text.lines().skip(1).map(|l| format!("{l}\n")));
    }
    write_atomic(&ledger.run_dir.join(LOSSES_FILE), losses.as_bytes())?;
    Ok(())
}
