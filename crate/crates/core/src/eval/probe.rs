use candle_core::{DType, Device, D};
use serde::{Deserialize, Serialize};

use super::metrics::embed_all;
use crate::algorithms::{cosine_lr, loss_ce, Sgd};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::memory::ExemplarMemory;
use crate::model::{Encoder, LinearHead};
use crate::rng::Rng;

/// Output-layer retraining budget. The probe is full-batch gradient descent
/// on cross-entropy over standardized frozen features, with cosine decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 300, lr: 0.5, momentum: 0.9, weight_decay: 1e-4 }
    }
}

/// Fits a fresh linear head on frozen features of `indices`. Classes are the
/// distinct labels in ascending order. The encoder is checked bit for bit
/// before and after.
pub fn linear_probe(
    encoder: &Encoder,
    dataset: &Dataset,
    indices: &[usize],
    cfg: &ProbeConfig,
    rng: &mut Rng,
    device: &Device,
) -> Result<LinearHead> {
    if indices.is_empty() {
        return Err(Error::argument("probe needs at least one example"));
    }
    let before = encoder.checksum()?;
    let feats = embed_all(encoder, dataset, indices, device)?.detach();
    let labels: Vec<u32> = indices.iter().map(|&i| dataset.label(i)).collect();
    let mut classes = labels.clone();
    classes.sort_unstable();
    classes.dedup();

    // standardize, then fold the affine map back into the head
    let mean = feats.mean_keepdim(0)?;
    let centered = feats.broadcast_sub(&mean)?;
    let std = centered.sqr()?.mean_keepdim(0)?.sqrt()?.clamp(1e-6, f64::MAX)?;
    let x = centered.broadcast_div(&std)?;

    let head = LinearHead::new(encoder.embedding_dim(), classes.clone(), rng)?;
    let targets: Vec<u32> = labels.iter().map(|y| classes.binary_search(y).expect("class listed") as u32).collect();
    let (w, b) = (head.vars()[0].clone(), head.vars()[1].clone());
    let mut opt = Sgd::new(vec![w.clone(), b.clone()], cfg.momentum, cfg.weight_decay);
    for step in 0..cfg.epochs {
        let logits = x.matmul(&w.as_tensor().t()?)?.broadcast_add(b.as_tensor())?;
        let grads = loss_ce(&logits, &targets)?.backward()?;
        opt.step(&grads, cosine_lr(cfg.lr, step, cfg.epochs))?;
    }
    // W x̂ + b with x̂ = (x − μ)/σ  ⇒  W' = W/σ,  b' = b − W' μ
    let w_fold = w.as_tensor().broadcast_div(&std)?;
    let b_fold = (b.as_tensor() - w_fold.matmul(&mean.t()?)?.squeeze(D::Minus1)?)?;
    if encoder.checksum()? != before {
        return Err(Error::internal("encoder changed during output-layer retraining"));
    }
    LinearHead::from_tensors(w_fold.to_dtype(DType::F32)?, b_fold.to_dtype(DType::F32)?, classes)
}

/// Output-layer retraining on the evaluation memory `M_o`, encoder frozen.
/// Test classes missing from the memory are reported and will score 0.
pub fn retrain_output_layer(
    encoder: &Encoder,
    memory_o: &ExemplarMemory,
    dataset: &Dataset,
    test_classes: &[u32],
    cfg: &ProbeConfig,
    rng: &mut Rng,
    device: &Device,
) -> Result<LinearHead> {
    if memory_o.is_empty() {
        return Err(Error::argument("evaluation memory is empty"));
    }
    let stored = memory_o.classes();
    let missing: Vec<u32> = test_classes.iter().copied().filter(|c| !stored.contains(c)).collect();
    if !missing.is_empty() {
        log::warn!("evaluation memory lacks classes {missing:?}; they will score 0");
    }
    let indices: Vec<usize> = memory_o.items().iter().map(|e| e.index).collect();
    linear_probe(encoder, dataset, &indices, cfg, rng, device)
}
