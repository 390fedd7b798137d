//! Per-task training loop shared by every algorithm, plus the joint and
//! GDumb reference learners.

use std::collections::BTreeMap;
use std::ops::Range;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::algorithm::{AlgorithmSpec, ClassifierStrategy, Objective, Regularizer};
use super::losses::{loss_ce, loss_infonce, loss_ird, loss_lwf_kd, loss_ssil, loss_supcon, l2_normalize, SsilBatch};
use super::mas::{accumulate_importance, mas_importance, mas_penalty, Importance};
use super::optim::{cosine_lr, Sgd};
use crate::data::{augment, images_to_tensor, AugmentConfig, Dataset, ScenarioMode, TaskSequence, ViewPolicy, Views};
use crate::error::{Error, Result};
use crate::memory::{BalancedSampler, ExemplarMemory};
use crate::model::{
    forward_logits, ClassifierHead, ContrastiveState, Encoder, EncoderArch, LinearHead, Mode, Model,
};
use crate::rng::{streams, Rng, SeedStreams};

/// The training data of one task as seen by a trainer.
#[derive(Debug, Clone)]
pub struct TaskData<'a> {
    pub dataset: &'a Dataset,
    pub mode: ScenarioMode,
    /// 1-based.
    pub task_id: usize,
    pub indices: &'a [usize],
    pub supervised: bool,
    /// Class sets of tasks `1..=task_id`, arrival order.
    pub class_sets: Vec<Vec<u32>>,
}

impl<'a> TaskData<'a> {
    pub fn from_sequence(seq: &'a TaskSequence, dataset: &'a Dataset, t: usize) -> Result<Self> {
        let task = seq.task(t)?;
        Ok(Self {
            dataset,
            mode: seq.mode,
            task_id: t,
            indices: &task.train,
            supervised: task.spec.supervised,
            class_sets: seq.tasks[..t].iter().map(|k| k.spec.class_set.clone()).collect(),
        })
    }

    fn class_to_task(&self) -> BTreeMap<u32, usize> {
        let mut m = BTreeMap::new();
        for (k, set) in self.class_sets.iter().enumerate() {
            for &c in set {
                m.entry(c).or_insert(k + 1);
            }
        }
        m
    }

    /// Column ranges of each task in a single head built in arrival order.
    fn blocks(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.class_sets
            .iter()
            .map(|s| {
                let r = start..start + s.len();
                start = r.end;
                r
            })
            .collect()
    }
}

/// What a trainer carries from one task to the next besides the model:
/// the anchor `θ*`, importances `Ω`, and the frozen end-of-task model.
#[derive(Debug, Default)]
pub struct RegularizerState {
    pub anchor: Option<BTreeMap<String, Tensor>>,
    pub omega: Option<Importance>,
    pub frozen: Option<Model>,
}

impl RegularizerState {
    /// Arrays that cannot be rebuilt from the end-of-task model itself.
    pub fn to_extras(&self) -> BTreeMap<String, Tensor> {
        match &self.omega {
            Some(o) => o.iter().map(|(k, v)| (format!("omega.{k}"), v.clone())).collect(),
            None => BTreeMap::new(),
        }
    }

    /// Rebuilds the state left behind by [`train_task`] from the model it
    /// produced and the stored extras.
    pub fn restore(model: &Model, extras: &BTreeMap<String, Tensor>, spec: &AlgorithmSpec) -> Result<Self> {
        let mut s = Self::default();
        if needs_frozen(spec) {
            s.frozen = Some(model.deep_clone()?);
        }
        if spec.regularizer == Regularizer::Mas {
            s.anchor = Some(model.encoder.params().snapshot()?);
            let omega: Importance = extras
                .iter()
                .filter_map(|(k, v)| k.strip_prefix("omega.").map(|n| (n.to_string(), v.clone())))
                .collect();
            if omega.is_empty() {
                return Err(Error::config("checkpoint has no importance weights for MAS"));
            }
            s.omega = Some(omega);
        }
        Ok(s)
    }
}

fn needs_frozen(spec: &AlgorithmSpec) -> bool {
    matches!(spec.regularizer, Regularizer::LwfKd | Regularizer::Ird) || spec.classifier_strategy == ClassifierStrategy::Ssil
}

/// Model plus everything a trainer mutates across tasks.
#[derive(Debug)]
pub struct ModelState {
    pub model: Model,
    pub contrastive: Option<ContrastiveState>,
    pub regularizer: RegularizerState,
}

impl ModelState {
    /// Fresh encoder (and projection / key networks for contrastive
    /// objectives) drawn from the `init` stream.
    pub fn init(arch: EncoderArch, spec: &AlgorithmSpec, streams: &SeedStreams) -> Result<Self> {
        let mut rng = streams.rng(streams::INIT, 0);
        let hp = &spec.hyperparameters;
        let mut model = Model::new(Encoder::new(arch, &mut rng)?);
        if spec.objective.is_contrastive() {
            model = model.with_projection(hp.projection_hidden, hp.projection_dim, &mut rng)?;
        }
        let contrastive = if spec.objective == Objective::Moco {
            Some(ContrastiveState::new(
                &model.encoder,
                model.projection()?,
                hp.moco_queue,
                hp.moco_momentum,
                hp.moco_temperature,
            )?)
        } else {
            None
        };
        Ok(Self { model, contrastive, regularizer: RegularizerState::default() })
    }
}

/// Shared settings that are not part of the algorithm itself.
#[derive(Debug, Clone)]
pub struct TrainEnv<'a> {
    pub augment: &'a AugmentConfig,
    pub streams: SeedStreams,
    pub device: Device,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub task: usize,
    pub loss_total: f64,
    pub loss_main: f64,
    pub loss_reg: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LossRecord>,
    pub steps: usize,
    /// Current-task and replayed samples consumed, summed over epochs.
    pub current_seen: usize,
    pub memory_seen: usize,
}

struct Batch {
    indices: Vec<usize>,
    labels: Vec<u32>,
    n_current: usize,
    first: Tensor,
    second: Option<Tensor>,
}

fn build_batch(
    dataset: &Dataset,
    items: &[(usize, u32)],
    n_current: usize,
    policy: ViewPolicy,
    cfg: &AugmentConfig,
    rng: &mut Rng,
    device: &Device,
) -> Result<Batch> {
    let shape = dataset.shape();
    let mut a = Vec::with_capacity(items.len() * shape.numel());
    let mut b = Vec::new();
    for &(i, _) in items {
        match augment(&dataset.example(i), shape, policy, cfg, rng) {
            Views::Single(v) => a.extend_from_slice(&v),
            Views::Pair(v, w) => {
                a.extend_from_slice(&v);
                b.extend_from_slice(&w);
            }
        }
    }
    let n = items.len();
    let second = if b.is_empty() { None } else { Some(images_to_tensor(b, n, shape, device)?) };
    Ok(Batch {
        indices: items.iter().map(|x| x.0).collect(),
        labels: items.iter().map(|x| x.1).collect(),
        n_current,
        first: images_to_tensor(a, n, shape, device)?,
        second,
    })
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Creates or grows classifier heads so they cover every class of tasks `1..=t`.
fn prepare_heads(model: &mut Model, data: &TaskData<'_>, rng: &mut Rng) -> Result<()> {
    let dim = model.encoder.embedding_dim();
    match data.mode {
        ScenarioMode::TaskIl => {
            let mut heads = match model.classifier.take() {
                Some(ClassifierHead::PerTask(m)) => m,
                None => BTreeMap::new(),
                Some(ClassifierHead::Single(_)) => return Err(Error::protocol("task-incremental runs use per-task heads")),
            };
            for (k, set) in data.class_sets.iter().enumerate() {
                if !heads.contains_key(&(k + 1)) {
                    heads.insert(k + 1, LinearHead::new(dim, set.clone(), rng)?);
                }
            }
            model.classifier = Some(ClassifierHead::PerTask(heads));
        }
        ScenarioMode::ClassIl | ScenarioMode::DataIl => {
            let mut wanted = Vec::new();
            for set in &data.class_sets {
                for &c in set {
                    if !wanted.contains(&c) {
                        wanted.push(c);
                    }
                }
            }
            match &mut model.classifier {
                None => model.classifier = Some(ClassifierHead::Single(LinearHead::new(dim, wanted, rng)?)),
                Some(ClassifierHead::Single(h)) => {
                    let missing: Vec<u32> = wanted.into_iter().filter(|c| h.position(*c).is_none()).collect();
                    h.expand(&missing, rng)?;
                }
                Some(ClassifierHead::PerTask(_)) => return Err(Error::protocol("single-head scenario got per-task heads")),
            }
        }
    }
    Ok(())
}

fn row_select(x: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let idx = Tensor::from_vec(rows.iter().map(|&r| r as u32).collect::<Vec<_>>(), rows.len(), x.device())?;
    Ok(x.index_select(&idx, 0)?)
}

fn positions(head: &LinearHead, labels: &[u32]) -> Result<Vec<u32>> {
    labels
        .iter()
        .map(|&c| {
            head.position(c)
                .map(|p| p as u32)
                .ok_or_else(|| Error::internal(format!("class {c} missing from the head")))
        })
        .collect()
}

/// `(main, reg)` for the cross-entropy family.
fn ce_losses(state: &mut ModelState, data: &TaskData<'_>, spec: &AlgorithmSpec, batch: &Batch) -> Result<(Tensor, Option<Tensor>)> {
    let hp = &spec.hyperparameters;
    let feats = state.model.encoder.forward(&batch.first, Mode::Train)?;
    let frozen = state.regularizer.frozen.as_ref();
    let head = state.model.classifier.as_ref().ok_or_else(|| Error::protocol("model has no classifier head"))?;
    match head {
        ClassifierHead::Single(h) => {
            let logits = h.forward(&feats)?;
            let targets = positions(h, &batch.labels)?;
            if spec.classifier_strategy == ClassifierStrategy::Ssil {
                let nc = batch.n_current;
                let nm = batch.labels.len() - nc;
                let blocks = data.blocks();
                let cur = logits.narrow(0, 0, nc)?;
                let mem = if nm > 0 { Some(logits.narrow(0, nc, nm)?) } else { None };
                let frozen_logits = match frozen {
                    Some(f) if data.task_id >= 2 => {
                        let fh = f.classifier.as_ref().ok_or_else(|| Error::internal("frozen model has no head"))?;
                        Some(forward_logits(&f.encoder, fh, &batch.first, None)?)
                    }
                    _ => None,
                };
                let out = loss_ssil(SsilBatch {
                    current_logits: &cur,
                    current_targets: &targets[..nc],
                    memory_logits: mem.as_ref(),
                    memory_targets: &targets[nc..],
                    frozen_logits: frozen_logits.as_ref(),
                    blocks: &blocks,
                    temperature: hp.kd_temperature,
                })?;
                let reg = if data.task_id >= 2 { Some(out.kd) } else { None };
                return Ok((out.separated_ce, reg));
            }
            let main = loss_ce(&logits, &targets)?;
            let reg = match (spec.regularizer, frozen) {
                (Regularizer::LwfKd, Some(f)) => {
                    let fh = f.classifier.as_ref().ok_or_else(|| Error::internal("frozen model has no head"))?;
                    let fl = forward_logits(&f.encoder, fh, &batch.first, None)?;
                    let old = fl.dim(1)?;
                    Some(loss_lwf_kd(&logits.narrow(1, 0, old)?, &fl, hp.kd_temperature)?.affine(hp.kd_lambda, 0.0)?)
                }
                _ => None,
            };
            Ok((main, reg))
        }
        ClassifierHead::PerTask(heads) => {
            let owner = data.class_to_task();
            let n = batch.labels.len();
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (r, c) in batch.labels.iter().enumerate() {
                let t = *owner.get(c).ok_or_else(|| Error::internal(format!("class {c} belongs to no task")))?;
                groups.entry(t).or_default().push(r);
            }
            let mut main: Option<Tensor> = None;
            for (t, rows) in &groups {
                let h = &heads[t];
                let labels: Vec<u32> = rows.iter().map(|&r| batch.labels[r]).collect();
                let l = loss_ce(&h.forward(&row_select(&feats, rows)?)?, &positions(h, &labels)?)?
                    .affine(rows.len() as f64 / n as f64, 0.0)?;
                main = Some(match main {
                    Some(m) => (m + l)?,
                    None => l,
                });
            }
            let main = main.ok_or_else(|| Error::argument("empty batch"))?;
            let reg = match (spec.regularizer, frozen) {
                (Regularizer::LwfKd, Some(f)) => {
                    let Some(ClassifierHead::PerTask(fheads)) = &f.classifier else {
                        return Err(Error::internal("frozen model has no per-task heads"));
                    };
                    let ff = f.encoder.embed(&batch.first)?;
                    let mut acc: Option<Tensor> = None;
                    for (t, fh) in fheads {
                        let l = loss_lwf_kd(&heads[t].forward(&feats)?, &fh.forward(&ff)?, hp.kd_temperature)?;
                        acc = Some(match acc {
                            Some(a) => (a + l)?,
                            None => l,
                        });
                    }
                    acc.map(|a| a.affine(hp.kd_lambda, 0.0)).transpose()?
                }
                _ => None,
            };
            Ok((main, reg))
        }
    }
}

fn supcon_losses(state: &mut ModelState, spec: &AlgorithmSpec, batch: &Batch) -> Result<(Tensor, Option<Tensor>)> {
    let hp = &spec.hyperparameters;
    let second = batch.second.as_ref().ok_or_else(|| Error::internal("contrastive batch without a second view"))?;
    let x = Tensor::cat(&[&batch.first, second], 0)?;
    let h = state.model.encoder.forward(&x, Mode::Train)?;
    let z = l2_normalize(&state.model.projection()?.forward(&h)?)?;
    let labels: Vec<u32> = batch.labels.iter().chain(batch.labels.iter()).copied().collect();
    let main = loss_supcon(&z, &labels, hp.supcon_temperature)?;
    let reg = match (spec.regularizer, state.regularizer.frozen.as_ref()) {
        (Regularizer::Ird, Some(f)) => {
            let past = l2_normalize(&f.projection()?.forward(&f.encoder.embed(&x)?)?)?;
            let ids: Vec<usize> = (0..2).flat_map(|v| batch.indices.iter().map(move |&i| 2 * i + v)).collect();
            Some(loss_ird(&z, &ids, &past, &ids, hp.ird_tau_current, hp.ird_tau_past)?.affine(hp.ird_lambda, 0.0)?)
        }
        _ => None,
    };
    Ok((main, reg))
}

// Query and key batch-norm statistics come from different groupings of the
// batch (contiguous halves vs even/odd rows). With shared statistics the
// encoder can match a query to its key through the batch signature alone.
fn split_bn_queries(enc: &mut Encoder, x: &Tensor) -> Result<Tensor> {
    let b = x.dim(0)?;
    if b < 4 {
        return enc.forward(x, Mode::Train);
    }
    let h = b / 2;
    let a = enc.forward(&x.narrow(0, 0, h)?, Mode::Train)?;
    let z = enc.forward(&x.narrow(0, h, b - h)?, Mode::Train)?;
    Ok(Tensor::cat(&[a, z], 0)?)
}

fn split_bn_keys(enc: &mut Encoder, x: &Tensor) -> Result<Tensor> {
    let b = x.dim(0)?;
    if b < 4 {
        return enc.forward(x, Mode::Train);
    }
    let dev = x.device();
    let even: Vec<u32> = (0..b as u32).step_by(2).collect();
    let odd: Vec<u32> = (1..b as u32).step_by(2).collect();
    let ne = even.len();
    let a = enc.forward(&x.index_select(&Tensor::new(even.as_slice(), dev)?, 0)?, Mode::Train)?;
    let z = enc.forward(&x.index_select(&Tensor::new(odd.as_slice(), dev)?, 0)?, Mode::Train)?;
    // row i came out at position i/2 (even) or ne + i/2 (odd)
    let back: Vec<u32> = (0..b).map(|i| if i % 2 == 0 { i / 2 } else { ne + i / 2 } as u32).collect();
    Ok(Tensor::cat(&[a, z], 0)?.index_select(&Tensor::new(back.as_slice(), dev)?, 0)?)
}

/// `None` while the queue is still empty: the keys are enqueued and no step is taken.
fn moco_losses(state: &mut ModelState, batch: &Batch) -> Result<Option<(Tensor, Tensor)>> {
    let second = batch.second.as_ref().ok_or_else(|| Error::internal("contrastive batch without a second view"))?;
    let c = state.contrastive.as_mut().ok_or_else(|| Error::protocol("momentum-contrast state missing"))?;
    let k = split_bn_keys(&mut c.key_encoder, second)?;
    let k = l2_normalize(&c.key_projection.forward(&k)?)?.detach();
    if c.queue().filled() == 0 {
        c.queue_push(&k)?;
        return Ok(None);
    }
    let queue = c.queue().keys()?;
    let tau = c.temperature;
    let h = split_bn_queries(&mut state.model.encoder, &batch.first)?;
    let q = l2_normalize(&state.model.projection()?.forward(&h)?)?;
    Ok(Some((loss_infonce(&q, &k, &queue, tau)?, k)))
}

fn mas_reg(state: &ModelState, spec: &AlgorithmSpec) -> Result<Option<Tensor>> {
    if spec.regularizer != Regularizer::Mas {
        return Ok(None);
    }
    let (Some(anchor), Some(omega)) = (&state.regularizer.anchor, &state.regularizer.omega) else {
        return Ok(None);
    };
    let params: Vec<(String, Tensor)> =
        state.model.encoder.params().iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect();
    Ok(Some(mas_penalty(&params, anchor, omega, spec.hyperparameters.lambda_mas)?))
}

/// Current-sample counts of each batch of one epoch. A trailing batch of a
/// single sample is folded into its predecessor so batch statistics stay defined.
fn batch_plan(n: usize, bs: usize) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut left = n;
    while left > 0 {
        let s = left.min(bs);
        sizes.push(s);
        left -= s;
    }
    if sizes.len() >= 2 && *sizes.last().expect("nonempty") == 1 {
        sizes.pop();
        *sizes.last_mut().expect("nonempty") += 1;
    }
    sizes
}

/// Trains `state` on one task and refreshes its regularizer state.
///
/// Replay rows from `memory` are appended to every batch: after `c` current
/// samples of an epoch, `⌊r·c⌋` replayed samples have been drawn.
pub fn train_task(
    state: &mut ModelState,
    data: &TaskData<'_>,
    memory: Option<&ExemplarMemory>,
    spec: &AlgorithmSpec,
    env: &TrainEnv<'_>,
) -> Result<TrainLog> {
    let hp = &spec.hyperparameters;
    spec.validate(data.mode, data.supervised, memory.map(|m| m.capacity()).unwrap_or(0))?;
    let t = data.task_id;
    if data.class_sets.len() != t {
        return Err(Error::argument(format!("{} class sets for task {t}", data.class_sets.len())));
    }
    if spec.objective == Objective::Ce {
        prepare_heads(&mut state.model, data, &mut env.streams.rng(streams::INIT, t as u64))?;
    } else {
        state.model.projection()?;
    }

    let mut batching = env.streams.rng(streams::BATCHING, t as u64);
    let mut aug_rng = env.streams.rng(streams::AUGMENT, t as u64);
    let replay = memory.filter(|m| !m.is_empty() && hp.replay_ratio > 0.0);
    let mut sampler = replay.map(|m| BalancedSampler::new(m, env.streams.rng(streams::REPLAY, t as u64))).transpose()?;
    let policy = if spec.objective.is_contrastive() { ViewPolicy::ContrastiveTwoView } else { ViewPolicy::CeStandard };
    let labels_for_current = spec.objective.uses_labels();

    let plan = batch_plan(data.indices.len(), hp.batch_size);
    let total_steps = plan.len() * hp.epochs;
    let mut opt = Sgd::new(state.model.trainable_vars(), hp.momentum, hp.weight_decay);
    let mut log = TrainLog::default();
    let mut step = 0usize;
    let mut order = data.indices.to_vec();
    for _epoch in 0..hp.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut batching);
        let mut consumed = 0usize;
        let mut drawn = 0usize;
        for &size in &plan {
            let current = &order[consumed..consumed + size];
            consumed += size;
            let mut items: Vec<(usize, u32)> = current
                .iter()
                .map(|&i| (i, if labels_for_current { data.dataset.label(i) } else { 0 }))
                .collect();
            if let Some(s) = sampler.as_mut() {
                let due = (hp.replay_ratio * consumed as f64).floor() as usize;
                let take = due - drawn;
                drawn = due;
                if take > 0 {
                    items.extend(s.next_batch(take).into_iter().map(|e| (e.index, e.label)));
                }
            }
            log.current_seen += size;
            log.memory_seen += items.len() - size;
            let batch = build_batch(data.dataset, &items, size, policy, env.augment, &mut aug_rng, &env.device)?;
            let lr = if hp.cosine { cosine_lr(hp.lr, step, total_steps) } else { hp.lr };
            step += 1;

            let (main, reg, keys) = match spec.objective {
                Objective::Ce => {
                    let (m, r) = ce_losses(state, data, spec, &batch)?;
                    (m, r, None)
                }
                Objective::Supcon => {
                    let (m, r) = supcon_losses(state, spec, &batch)?;
                    (m, r, None)
                }
                Objective::Moco => match moco_losses(state, &batch)? {
                    Some((m, k)) => (m, None, Some(k)),
                    None => continue,
                },
            };
            let reg = match (reg, mas_reg(state, spec)?) {
                (Some(a), Some(b)) => Some((a + b)?),
                (a, b) => a.or(b),
            };
            let total = match &reg {
                Some(r) => (&main + r)?,
                None => main.clone(),
            };
            let (lt, lm) = (scalar(&total)?, scalar(&main)?);
            let lr_ = match &reg {
                Some(r) => scalar(r)?,
                None => 0.0,
            };
            if !lt.is_finite() {
                return Err(Error::internal(format!("non-finite loss at task {t} step {}", step - 1)));
            }
            let grads = total.backward()?;
            opt.step(&grads, lr)?;
            if let (Some(k), Some(c)) = (keys, state.contrastive.as_mut()) {
                c.ema_update(&state.model.encoder, state.model.projection()?)?;
                c.queue_push(&k)?;
            }
            log.records.push(LossRecord { step: step - 1, task: t, loss_total: lt, loss_main: lm, loss_reg: lr_ });
        }
    }
    log.steps = step;
    refresh_regularizer(state, data, spec, env)?;
    Ok(log)
}

fn refresh_regularizer(state: &mut ModelState, data: &TaskData<'_>, spec: &AlgorithmSpec, env: &TrainEnv<'_>) -> Result<()> {
    if needs_frozen(spec) {
        state.regularizer.frozen = Some(state.model.deep_clone()?);
    }
    if spec.regularizer != Regularizer::Mas {
        return Ok(());
    }
    let hp = &spec.hyperparameters;
    let n = data.indices.len().min(hp.mas_samples.max(1));
    let picked: Vec<usize> = (0..n).map(|i| data.indices[i * data.indices.len() / n]).collect();
    let inputs = picked
        .chunks(32)
        .map(|c| data.dataset.batch_tensor(c, &env.device))
        .collect::<Result<Vec<_>>>()?;
    let params: Vec<(String, candle_core::Var)> =
        state.model.encoder.params().iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let model = &state.model;
    let task = data.task_id;
    let fresh = match spec.objective {
        Objective::Ce => {
            let head = model.classifier.as_ref().ok_or_else(|| Error::internal("no classifier head"))?;
            let task_id = match head {
                ClassifierHead::PerTask(_) => Some(task),
                ClassifierHead::Single(_) => None,
            };
            mas_importance(&params, &inputs, |x| head.forward(&model.encoder.embed(x)?, task_id))?
        }
        _ => {
            let proj = model.projection()?;
            mas_importance(&params, &inputs, |x| proj.forward(&model.encoder.embed(x)?))?
        }
    };
    let omega = match (&state.regularizer.omega, hp.mas_accumulate) {
        (Some(prev), true) => accumulate_importance(prev, &fresh)?,
        _ => fresh,
    };
    state.regularizer.omega = Some(omega);
    state.regularizer.anchor = Some(state.model.encoder.params().snapshot()?);
    Ok(())
}

/// Upper-bound reference: a fresh model trained on the union of tasks `1..=t`.
pub fn train_joint(
    arch: EncoderArch,
    seq: &TaskSequence,
    dataset: &Dataset,
    t: usize,
    spec: &AlgorithmSpec,
    env: &TrainEnv<'_>,
) -> Result<(ModelState, TrainLog)> {
    let spec = AlgorithmSpec { regularizer: Regularizer::None, classifier_strategy: ClassifierStrategy::Standard, ..spec.clone() };
    let indices = seq.cumulative_train_set(t)?;
    let mut data = TaskData::from_sequence(seq, dataset, t)?;
    data.indices = &indices;
    let mut state = ModelState::init(arch, &spec, &env.streams)?;
    let log = train_task(&mut state, &data, None, &spec, env)?;
    Ok((state, log))
}

/// GDumb's learner: a fresh model trained only on the memory contents, with
/// one head over the stored classes.
pub fn gdumb_learner(
    memory: &ExemplarMemory,
    dataset: &Dataset,
    labeled: bool,
    arch: EncoderArch,
    spec: &AlgorithmSpec,
    env: &TrainEnv<'_>,
) -> Result<(ModelState, TrainLog)> {
    if !labeled {
        return Err(Error::protocol("GDumb needs a labeled memory"));
    }
    if memory.is_empty() {
        return Err(Error::argument("GDumb needs a nonempty memory"));
    }
    let spec = AlgorithmSpec {
        objective: Objective::Ce,
        regularizer: Regularizer::None,
        classifier_strategy: ClassifierStrategy::Standard,
        hyperparameters: spec.hyperparameters.clone(),
    };
    let indices: Vec<usize> = memory.items().iter().map(|e| e.index).collect();
    let data = TaskData {
        dataset,
        mode: ScenarioMode::ClassIl,
        task_id: 1,
        indices: &indices,
        supervised: true,
        class_sets: vec![memory.classes()],
    };
    let mut state = ModelState::init(arch, &spec, &env.streams)?;
    let log = train_task(&mut state, &data, None, &spec, env)?;
    Ok((state, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, GlyphConfig};
    use crate::data::build_class_il;

    fn env(aug: &AugmentConfig) -> TrainEnv<'_> {
        TrainEnv { augment: aug, streams: SeedStreams::new(5), device: Device::Cpu }
    }

    #[test]
    fn plan_folds_singletons() {
        assert_eq!(batch_plan(65, 32), vec![32, 33]);
        assert_eq!(batch_plan(64, 32), vec![32, 32]);
        assert_eq!(batch_plan(1, 32), vec![1]);
    }

    #[test]
    fn zero_epochs_leave_encoder_unchanged() {
        let data = generate(&GlyphConfig { num_classes: 4, train_per_class: 6, test_per_class: 2, ..Default::default() }).unwrap();
        let seq = build_class_il(&data, &[2, 2], 0).unwrap();
        let aug = AugmentConfig::default();
        let mut spec = AlgorithmSpec::new(Objective::Ce);
        spec.hyperparameters.epochs = 0;
        let mut st = ModelState::init(EncoderArch::resnet_tiny(3), &spec, &env(&aug).streams).unwrap();
        let before = st.model.encoder.checksum().unwrap();
        let td = TaskData::from_sequence(&seq, &data.train, 1).unwrap();
        let log = train_task(&mut st, &td, None, &spec, &env(&aug)).unwrap();
        assert_eq!(log.steps, 0);
        assert_eq!(st.model.encoder.checksum().unwrap(), before);
    }

    #[test]
    fn replay_share_tracks_ratio() {
        let data = generate(&GlyphConfig { num_classes: 4, train_per_class: 13, test_per_class: 2, ..Default::default() }).unwrap();
        let seq = build_class_il(&data, &[2, 2], 0).unwrap();
        let aug = AugmentConfig::default();
        let mut spec = AlgorithmSpec::new(Objective::Ce);
        spec.hyperparameters.epochs = 2;
        spec.hyperparameters.batch_size = 8;
        spec.hyperparameters.replay_ratio = 0.6;
        let mut mem = ExemplarMemory::capacity_balanced(10, 1);
        let t1 = &seq.tasks[0].train;
        for &i in t1 {
            mem.offer(i, data.train.label(i));
        }
        let mut st = ModelState::init(EncoderArch::resnet_tiny(3), &spec, &env(&aug).streams).unwrap();
        let td = TaskData::from_sequence(&seq, &data.train, 2).unwrap();
        let log = train_task(&mut st, &td, Some(&mem), &spec, &env(&aug)).unwrap();
        let per_epoch_current = td.indices.len();
        assert_eq!(log.current_seen, 2 * per_epoch_current);
        let expect = 2.0 * 0.6 * per_epoch_current as f64;
        assert!((log.memory_seen as f64 - expect).abs() < spec.hyperparameters.batch_size as f64);
    }

    #[test]
    fn deterministic_given_seed() {
        let data = generate(&GlyphConfig { num_classes: 4, train_per_class: 8, test_per_class: 2, ..Default::default() }).unwrap();
        let seq = build_class_il(&data, &[2, 2], 0).unwrap();
        let aug = AugmentConfig::default();
        let mut spec = AlgorithmSpec::new(Objective::Supcon).with_regularizer(Regularizer::Mas);
        spec.hyperparameters.epochs = 1;
        spec.hyperparameters.batch_size = 8;
        spec.hyperparameters.mas_samples = 4;
        let run = || {
            let mut st = ModelState::init(EncoderArch::resnet_tiny(3), &spec, &env(&aug).streams).unwrap();
            for t in 1..=2 {
                let td = TaskData::from_sequence(&seq, &data.train, t).unwrap();
                train_task(&mut st, &td, None, &spec, &env(&aug)).unwrap();
            }
            st.model.encoder.checksum().unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gdumb_refuses_unlabeled_memory() {
        let data = generate(&GlyphConfig { num_classes: 2, train_per_class: 4, test_per_class: 2, ..Default::default() }).unwrap();
        let mut mem = ExemplarMemory::capacity_balanced(4, 0);
        mem.offer(0, data.train.label(0));
        let aug = AugmentConfig::default();
        let spec = AlgorithmSpec::new(Objective::Ce);
        let r = gdumb_learner(&mem, &data.train, false, EncoderArch::resnet_tiny(3), &spec, &env(&aug));
        assert!(matches!(r, Err(Error::Protocol(_))));
    }
}
