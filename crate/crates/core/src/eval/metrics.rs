use std::collections::BTreeMap;

use candle_core::{Device, Tensor};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ClassifierHead, Encoder};

const EVAL_BATCH: usize = 256;

/// Evaluation-mode embeddings of `indices`, `(N, D)`.
pub fn embed_all(encoder: &Encoder, dataset: &Dataset, indices: &[usize], device: &Device) -> Result<Tensor> {
    if indices.is_empty() {
        return Err(Error::argument("nothing to embed"));
    }
    let parts = indices
        .chunks(EVAL_BATCH)
        .map(|c| encoder.embed(&dataset.batch_tensor(c, device)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&parts, 0)?)
}

fn argmax_rows(logits: &Tensor) -> Result<Vec<usize>> {
    Ok(logits.argmax(1)?.to_vec1::<u32>()?.into_iter().map(|i| i as usize).collect())
}

/// Predicted class per row of `features`.
///
/// With `task_of` the true task of each sample is supplied: a per-task head
/// scores with that task's head, a single head is masked to that task's
/// classes. Without it, per-task heads compete through their concatenated
/// logits.
pub fn predict(
    head: &ClassifierHead,
    features: &Tensor,
    true_labels: &[u32],
    task_of: Option<&BTreeMap<u32, usize>>,
) -> Result<Vec<Option<u32>>> {
    let n = features.dim(0)?;
    if n != true_labels.len() {
        return Err(Error::argument("features and labels differ in length"));
    }
    match (head, task_of) {
        (ClassifierHead::Single(h), None) => {
            Ok(argmax_rows(&h.forward(features)?)?.into_iter().map(|p| Some(h.classes()[p])).collect())
        }
        (ClassifierHead::Single(h), Some(owner)) => {
            let logits = h.forward(features)?.to_vec2::<f32>()?;
            Ok(logits
                .iter()
                .zip(true_labels)
                .map(|(row, y)| {
                    let t = owner.get(y)?;
                    h.classes()
                        .iter()
                        .zip(row)
                        .filter(|(c, _)| owner.get(c) == Some(t))
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(c, _)| *c)
                })
                .collect())
        }
        (ClassifierHead::PerTask(heads), Some(owner)) => {
            let mut out = vec![None; n];
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, y) in true_labels.iter().enumerate() {
                if let Some(&t) = owner.get(y) {
                    groups.entry(t).or_default().push(i);
                }
            }
            for (t, rows) in groups {
                let Some(h) = heads.get(&t) else { continue };
                let idx = Tensor::from_vec(rows.iter().map(|&r| r as u32).collect::<Vec<_>>(), rows.len(), features.device())?;
                let pred = argmax_rows(&h.forward(&features.index_select(&idx, 0)?)?)?;
                for (r, p) in rows.into_iter().zip(pred) {
                    out[r] = Some(h.classes()[p]);
                }
            }
            Ok(out)
        }
        (ClassifierHead::PerTask(heads), None) => {
            let logits = heads.values().map(|h| h.forward(features)).collect::<Result<Vec<_>>>()?;
            let classes: Vec<u32> = heads.values().flat_map(|h| h.classes().iter().copied()).collect();
            let cat = Tensor::cat(&logits, 1)?;
            Ok(argmax_rows(&cat)?.into_iter().map(|p| Some(classes[p])).collect())
        }
    }
}

/// Top-1 accuracy over `indices` of `dataset`. Samples whose class the head
/// does not cover count as wrong.
pub fn evaluate_accuracy(
    encoder: &Encoder,
    head: &ClassifierHead,
    dataset: &Dataset,
    indices: &[usize],
    task_of: Option<&BTreeMap<u32, usize>>,
    device: &Device,
) -> Result<f64> {
    let labels: Vec<u32> = indices.iter().map(|&i| dataset.label(i)).collect();
    let feats = embed_all(encoder, dataset, indices, device)?;
    let pred = predict(head, &feats, &labels, task_of)?;
    Ok(accuracy(&pred, &labels, &head.classes()))
}

pub(crate) fn accuracy(pred: &[Option<u32>], labels: &[u32], covered: &[u32]) -> f64 {
    let missing: Vec<u32> = {
        let mut m: Vec<u32> = labels.iter().copied().filter(|c| !covered.contains(c)).collect();
        m.sort_unstable();
        m.dedup();
        m
    };
    if !missing.is_empty() {
        log::warn!("classes {missing:?} are not covered by the head and score 0");
    }
    if labels.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(labels).filter(|(p, y)| **p == Some(**y)).count();
    hits as f64 / labels.len() as f64
}

/// Row-stochastic `T×T` matrix of prediction mass: row = true task,
/// column = task owning the predicted class. With no class→task mapping
/// (every task shares every class) the profile is `[[1.0]]`.
pub fn bias_profile_from_predictions(
    pred: &[Option<u32>],
    labels: &[u32],
    class_to_task: &BTreeMap<u32, usize>,
    num_tasks: usize,
) -> Result<Vec<Vec<f64>>> {
    if class_to_task.is_empty() || num_tasks <= 1 {
        return Ok(vec![vec![1.0]]);
    }
    let mut m = vec![vec![0.0f64; num_tasks]; num_tasks];
    for (p, y) in pred.iter().zip(labels) {
        let Some(&row) = class_to_task.get(y) else { continue };
        if row == 0 || row > num_tasks {
            return Err(Error::argument(format!("task {row} outside 1..={num_tasks}")));
        }
        // predictions of classes outside every task carry no mass
        if let Some(&col) = p.and_then(|c| class_to_task.get(&c)) {
            if col >= 1 && col <= num_tasks {
                m[row - 1][col - 1] += 1.0;
            }
        }
    }
    for (i, row) in m.iter_mut().enumerate() {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        } else {
            row[i] = 1.0;
        }
    }
    Ok(m)
}

/// Task-confusion profile of a head on the cumulative test set.
pub fn bias_profile(
    encoder: &Encoder,
    head: &ClassifierHead,
    dataset: &Dataset,
    indices: &[usize],
    class_to_task: &BTreeMap<u32, usize>,
    num_tasks: usize,
    device: &Device,
) -> Result<Vec<Vec<f64>>> {
    if class_to_task.is_empty() || num_tasks <= 1 {
        return Ok(vec![vec![1.0]]);
    }
    let labels: Vec<u32> = indices.iter().map(|&i| dataset.label(i)).collect();
    let feats = embed_all(encoder, dataset, indices, device)?;
    let pred = predict(head, &feats, &labels, None)?;
    bias_profile_from_predictions(&pred, &labels, class_to_task, num_tasks)
}

/// Predictions of a bare linear head on precomputed features.
#[cfg(test)]
pub(crate) fn head_predictions(head: &crate::model::LinearHead, features: &Tensor) -> Result<Vec<Option<u32>>> {
    Ok(argmax_rows(&head.forward(features)?)?.into_iter().map(|p| Some(head.classes()[p])).collect())
}
