//! Training objectives. Every function works on any float dtype, so the
//! finite-difference checks can run in f64.

use std::ops::Range;

use candle_core::{DType, Device, Tensor, D};

use crate::error::{Error, Result};

pub(crate) fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Rows scaled to unit L2 norm. Warns once per call when any row was off by
/// more than `1e-3`.
/// Row-wise L2 normalization, as applied to projection outputs before any
/// contrastive loss.
pub(crate) fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    Ok(x.broadcast_div(&norm.clamp(1e-12, f64::MAX)?)?)
}

pub(crate) fn normalize_rows(x: &Tensor, what: &str) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    let worst = norm
        .to_dtype(DType::F64)?
        .flatten_all()?
        .to_vec1::<f64>()?
        .into_iter()
        .fold(0.0f64, |m, n| m.max((n - 1.0).abs()));
    if worst > 1e-3 {
        log::warn!("{what}: features are not unit-normalized (max |‖z‖-1| = {worst:.3e}); normalizing");
        l2_normalize(x)
    } else {
        Ok(x.clone())
    }
}

fn one_hot(targets: &[u32], width: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut buf = vec![0f32; targets.len() * width];
    for (i, &t) in targets.iter().enumerate() {
        buf[i * width + t as usize] = 1.0;
    }
    Ok(Tensor::from_vec(buf, (targets.len(), width), device)?.to_dtype(dtype)?)
}

fn check_2d(x: &Tensor, what: &str) -> Result<(usize, usize)> {
    match x.dims() {
        &[b, w] => Ok((b, w)),
        d => Err(Error::argument(format!("{what} must be 2-D, got {d:?}"))),
    }
}

/// Per-row cross-entropy, summed (not averaged). `targets` are column positions.
fn ce_sum(logits: &Tensor, targets: &[u32]) -> Result<Tensor> {
    let (b, w) = check_2d(logits, "logits")?;
    if b != targets.len() {
        return Err(Error::argument(format!("{b} logit rows but {} labels", targets.len())));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t as usize >= w) {
        return Err(Error::argument(format!("label {bad} outside logit width {w}")));
    }
    let oh = one_hot(targets, w, logits.dtype(), logits.device())?;
    Ok((log_softmax(logits)? * oh)?.sum_all()?.neg()?)
}

/// Mean cross-entropy. `labels` index logit columns.
pub fn loss_ce(logits: &Tensor, labels: &[u32]) -> Result<Tensor> {
    if labels.is_empty() {
        return Err(Error::argument("empty batch"));
    }
    Ok(ce_sum(logits, labels)?.affine(1.0 / labels.len() as f64, 0.0)?)
}

/// Row-summed `KL(softmax(frozen/T) ‖ softmax(current/T))`. The frozen side is detached.
fn kd_sum(current: &Tensor, frozen: &Tensor, t: f64) -> Result<Tensor> {
    let frozen = frozen.detach();
    let log_p = log_softmax(&frozen.affine(1.0 / t, 0.0)?)?;
    let log_q = log_softmax(&current.affine(1.0 / t, 0.0)?)?;
    Ok((log_p.exp()? * (log_p - log_q)?)?.sum_all()?)
}

/// Temperature-softened logit distillation, averaged over the batch.
pub fn loss_lwf_kd(current_old: &Tensor, frozen: &Tensor, temperature: f64) -> Result<Tensor> {
    if current_old.dims() != frozen.dims() {
        return Err(Error::protocol(format!(
            "distillation widths differ: current {:?} vs frozen {:?}",
            current_old.dims(),
            frozen.dims()
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::argument(format!("temperature must be positive, got {temperature}")));
    }
    let (b, _) = check_2d(current_old, "logits")?;
    if b == 0 {
        return Err(Error::argument("empty batch"));
    }
    Ok(kd_sum(current_old, frozen, temperature)?.affine(1.0 / b as f64, 0.0)?)
}

/// Inputs of the separated-softmax loss. Logits come from one shared head
/// whose columns are partitioned into contiguous task blocks; the last block
/// is the current task.
#[derive(Debug, Clone, Copy)]
pub struct SsilBatch<'a> {
    pub current_logits: &'a Tensor,
    /// Column positions, all inside the current block.
    pub current_targets: &'a [u32],
    pub memory_logits: Option<&'a Tensor>,
    /// Column positions; each selects its own block.
    pub memory_targets: &'a [u32],
    /// Frozen-model logits over the previous blocks for `current` followed by `memory` rows.
    pub frozen_logits: Option<&'a Tensor>,
    pub blocks: &'a [Range<usize>],
    pub temperature: f64,
}

#[derive(Debug, Clone)]
pub struct SsilLoss {
    pub separated_ce: Tensor,
    pub kd: Tensor,
}

impl SsilLoss {
    pub fn total(&self) -> Result<Tensor> {
        Ok((&self.separated_ce + &self.kd)?)
    }
}

fn block_of(blocks: &[Range<usize>], col: u32) -> Result<usize> {
    blocks
        .iter()
        .position(|r| r.contains(&(col as usize)))
        .ok_or_else(|| Error::argument(format!("label column {col} is in no task block")))
}

/// Cross-entropy of selected rows over one block of columns, summed.
fn block_ce(logits: &Tensor, rows: &[usize], block: &Range<usize>, targets: &[u32]) -> Result<Tensor> {
    let idx = Tensor::from_vec(rows.iter().map(|&r| r as u32).collect::<Vec<_>>(), rows.len(), logits.device())?;
    let sub = logits.index_select(&idx, 0)?.narrow(1, block.start, block.len())?;
    let local: Vec<u32> = targets.iter().map(|&t| t - block.start as u32).collect();
    ce_sum(&sub, &local)
}

/// Separated softmax: current samples are scored over the current block only,
/// replayed samples over their own task's block only, plus task-wise
/// distillation of every previous block against the frozen model.
///
/// Selecting the block before the softmax makes the gradient of the
/// cross-entropy part on every other block exactly zero.
pub fn loss_ssil(batch: SsilBatch<'_>) -> Result<SsilLoss> {
    let blocks = batch.blocks;
    let Some(current_block) = blocks.last() else {
        return Err(Error::argument("no task blocks"));
    };
    let t = blocks.len();
    let (nc, width) = check_2d(batch.current_logits, "current logits")?;
    if width != current_block.end {
        return Err(Error::protocol(format!("head width {width} does not match task blocks ending at {}", current_block.end)));
    }
    if nc != batch.current_targets.len() {
        return Err(Error::argument("current logits and targets differ in length"));
    }
    for &c in batch.current_targets {
        if !current_block.contains(&(c as usize)) {
            return Err(Error::argument(format!("current-task label column {c} outside the current block")));
        }
    }
    let memory = match batch.memory_logits {
        Some(m) if !batch.memory_targets.is_empty() => Some(m),
        _ => None,
    };
    if t >= 2 && memory.is_none() {
        return Err(Error::protocol("separated softmax needs a replay batch after the first task"));
    }
    let all_rows: Vec<usize> = (0..nc).collect();
    let mut ce = block_ce(batch.current_logits, &all_rows, current_block, batch.current_targets)?;
    let mut n = nc;
    if let Some(m) = memory {
        let (nm, mw) = check_2d(m, "memory logits")?;
        if mw != width || nm != batch.memory_targets.len() {
            return Err(Error::argument("memory logits do not match the head or the targets"));
        }
        for (k, block) in blocks.iter().enumerate() {
            let rows: Vec<usize> = (0..nm)
                .filter(|&i| block_of(blocks, batch.memory_targets[i]).map(|b| b == k).unwrap_or(false))
                .collect();
            if rows.is_empty() {
                continue;
            }
            let targets: Vec<u32> = rows.iter().map(|&i| batch.memory_targets[i]).collect();
            ce = (ce + block_ce(m, &rows, block, &targets)?)?;
        }
        for &c in batch.memory_targets {
            block_of(blocks, c)?;
        }
        n += nm;
    }
    if n == 0 {
        return Err(Error::argument("empty batch"));
    }
    let separated_ce = ce.affine(1.0 / n as f64, 0.0)?;

    let kd = if t >= 2 {
        let frozen = batch.frozen_logits.ok_or_else(|| Error::protocol("separated softmax needs the frozen model after the first task"))?;
        let stacked = match memory {
            Some(m) => Tensor::cat(&[batch.current_logits, m], 0)?,
            None => batch.current_logits.clone(),
        };
        let old_width = blocks[t - 2].end;
        let (fr, fw) = check_2d(frozen, "frozen logits")?;
        if fr != n || fw != old_width {
            return Err(Error::protocol(format!("frozen logits {:?} do not cover {n} rows × {old_width} old columns", frozen.dims())));
        }
        let mut kd = stacked.zeros_like()?.sum_all()?;
        for block in &blocks[..t - 1] {
            let cur = stacked.narrow(1, block.start, block.len())?;
            let fro = frozen.narrow(1, block.start, block.len())?;
            kd = (kd + kd_sum(&cur, &fro, batch.temperature)?)?;
        }
        kd.affine(1.0 / n as f64, 0.0)?
    } else {
        separated_ce.zeros_like()?
    };
    Ok(SsilLoss { separated_ce, kd })
}

fn eye_mask(n: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut buf = vec![0f32; n * n];
    for i in 0..n {
        buf[i * n + i] = 1.0;
    }
    Ok(Tensor::from_vec(buf, (n, n), device)?.to_dtype(dtype)?)
}

/// Supervised contrastive loss. Each anchor averages
/// `-log(exp(z_i·z_p/τ) / Σ_{a≠i} exp(z_i·z_a/τ))` over its same-label
/// positives; anchors without positives are skipped and the result is the mean
/// over the remaining anchors.
pub fn loss_supcon(features: &Tensor, labels: &[u32], temperature: f64) -> Result<Tensor> {
    let (b, _) = check_2d(features, "features")?;
    if b < 2 {
        return Err(Error::argument("contrastive loss needs at least 2 samples"));
    }
    if labels.len() != b {
        return Err(Error::argument(format!("{b} features but {} labels", labels.len())));
    }
    if !(temperature > 0.0) {
        return Err(Error::argument("temperature must be positive"));
    }
    let z = normalize_rows(features, "supcon")?;
    let (dtype, dev) = (z.dtype(), z.device().clone());
    let sim = z.matmul(&z.t()?)?.affine(1.0 / temperature, 0.0)?;
    let not_self = eye_mask(b, dtype, &dev)?.affine(-1.0, 1.0)?;
    let max = sim.max_keepdim(1)?.detach();
    let shifted = sim.broadcast_sub(&max)?;
    let denom = (shifted.exp()? * &not_self)?.sum_keepdim(1)?.log()?;
    let log_prob = shifted.broadcast_sub(&denom)?;

    let mut pos = vec![0f32; b * b];
    let mut counts = vec![0usize; b];
    for i in 0..b {
        for j in 0..b {
            if i != j && labels[i] == labels[j] {
                pos[i * b + j] = 1.0;
                counts[i] += 1;
            }
        }
    }
    let anchors = counts.iter().filter(|&&c| c > 0).count();
    if anchors == 0 {
        log::warn!("supcon: no anchor has a positive in this batch");
        return Ok(sim.sum_all()?.affine(0.0, 0.0)?);
    }
    // weight 1/(|P(i)| · anchors) per positive pair
    let weights: Vec<f64> = (0..b * b)
        .map(|k| if pos[k] > 0.0 { 1.0 / (counts[k / b] * anchors) as f64 } else { 0.0 })
        .collect();
    let w = Tensor::from_vec(weights, (b, b), &dev)?.to_dtype(dtype)?;
    Ok((log_prob * w)?.sum_all()?.neg()?)
}

/// Off-diagonal entries of a square matrix as `(n, n-1)`, row order kept.
fn off_diagonal(m: &Tensor) -> Result<Tensor> {
    let n = m.dim(0)?;
    let mut idx = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        idx.extend((0..n).filter(|&j| j != i).map(|j| j as u32));
    }
    let idx = Tensor::from_vec(idx, (n, n - 1), m.device())?;
    Ok(m.contiguous()?.gather(&idx, 1)?)
}

/// Instance-wise relation distillation. For every instance the similarity
/// distribution over the other batch members is computed under both models;
/// the loss is the mean KL divergence from the past model's distribution to
/// the current one. The past features are detached.
///
/// `current_ids` and `past_ids` are the dataset indices of each row and must
/// agree, otherwise the distributions would be compared across instances.
pub fn loss_ird(
    current: &Tensor,
    current_ids: &[usize],
    past: &Tensor,
    past_ids: &[usize],
    tau_current: f64,
    tau_past: f64,
) -> Result<Tensor> {
    if current_ids != past_ids {
        return Err(Error::protocol("relation distillation batches are in different instance orders"));
    }
    if current.dims() != past.dims() {
        return Err(Error::protocol(format!("feature shapes differ: {:?} vs {:?}", current.dims(), past.dims())));
    }
    let (b, _) = check_2d(current, "features")?;
    if b < 3 {
        return Err(Error::argument("relation distillation needs a batch of at least 3"));
    }
    if current_ids.len() != b {
        return Err(Error::argument("instance ids do not match the batch"));
    }
    if !(tau_current > 0.0 && tau_past > 0.0) {
        return Err(Error::argument("temperatures must be positive"));
    }
    let zc = normalize_rows(current, "ird current")?;
    let zp = normalize_rows(&past.detach(), "ird past")?;
    let sc = off_diagonal(&zc.matmul(&zc.t()?)?.affine(1.0 / tau_current, 0.0)?)?;
    let sp = off_diagonal(&zp.matmul(&zp.t()?)?.affine(1.0 / tau_past, 0.0)?)?;
    let log_p = log_softmax(&sp)?;
    let log_q = log_softmax(&sc)?;
    Ok((log_p.exp()? * (log_p - log_q)?)?.sum_all()?.affine(1.0 / b as f64, 0.0)?)
}

/// InfoNCE with the positive key as class 0 among `1 + K` logits
/// `[q·k⁺, q·n₁, …, q·n_K] / τ`. Keys and queue are treated as constants.
pub fn loss_infonce(query: &Tensor, positive_key: &Tensor, queue: &Tensor, temperature: f64) -> Result<Tensor> {
    let (b, d) = check_2d(query, "query")?;
    if positive_key.dims() != query.dims() {
        return Err(Error::argument("query and positive key shapes differ"));
    }
    let (k, qd) = check_2d(queue, "queue")?;
    if k == 0 {
        return Err(Error::protocol("negative-key queue is empty"));
    }
    if qd != d {
        return Err(Error::argument(format!("queue dim {qd} vs query dim {d}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::argument("temperature must be positive"));
    }
    let q = normalize_rows(query, "infonce query")?;
    let kp = normalize_rows(&positive_key.detach(), "infonce key")?;
    let l_pos = (&q * &kp)?.sum_keepdim(1)?;
    let l_neg = q.matmul(&queue.detach().to_dtype(q.dtype())?.t()?)?;
    let logits = Tensor::cat(&[&l_pos, &l_neg], 1)?.affine(1.0 / temperature, 0.0)?;
    loss_ce(&logits, &vec![0u32; b])
}
