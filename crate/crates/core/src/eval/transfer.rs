use candle_core::Device;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::evaluate_accuracy;
use crate::algorithms::{cosine_lr, loss_ce, Sgd};
use crate::data::{augment, images_to_tensor, AugmentConfig, SplitDataset, ViewPolicy, Views};
use crate::error::{Error, Result};
use crate::model::{ClassifierHead, Encoder, LinearHead, Mode};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fine-tune the encoder copy as well as the fresh head.
    pub fine_tune_encoder: bool,
    /// Expected number of downstream classes; a mismatch with the dataset is
    /// a configuration error.
    pub num_classes: Option<usize>,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 32, lr: 0.02, momentum: 0.9, weight_decay: 5e-4, fine_tune_encoder: true, num_classes: None }
    }
}

/// Fine-tunes a copy of `encoder` with a fresh head on the downstream train
/// split and returns test accuracy. The given encoder is never modified.
pub fn downstream_transfer(
    encoder: &Encoder,
    downstream: &SplitDataset,
    cl_dataset_name: &str,
    cfg: &TransferConfig,
    augment_cfg: &AugmentConfig,
    rng: &mut Rng,
    device: &Device,
) -> Result<f64> {
    if downstream.name() == cl_dataset_name {
        return Err(Error::config(format!("downstream dataset `{}` is the continual-learning dataset", downstream.name())));
    }
    let k = downstream.num_classes();
    if let Some(expected) = cfg.num_classes {
        if expected != k {
            return Err(Error::config(format!(
                "transfer config expects {expected} classes but `{}` has {k}",
                downstream.name()
            )));
        }
    }
    if downstream.shape().channels != encoder.arch().in_channels {
        return Err(Error::config("downstream images do not match the encoder's input channels"));
    }
    let before = encoder.checksum()?;
    let mut enc = encoder.deep_clone()?;
    let head = LinearHead::new(enc.embedding_dim(), (0..k as u32).collect(), rng)?;
    let mut vars = head.vars();
    if cfg.fine_tune_encoder {
        vars.extend(enc.params().vars());
    }
    let train = &downstream.train;
    let shape = train.shape();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let per_epoch = order.len().div_ceil(cfg.batch_size.max(1));
    let total = per_epoch * cfg.epochs;
    let mut opt = Sgd::new(vars, cfg.momentum, cfg.weight_decay);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            if chunk.len() < 2 && cfg.fine_tune_encoder {
                continue;
            }
            let mut buf = Vec::with_capacity(chunk.len() * shape.numel());
            for &i in chunk {
                if let Views::Single(v) = augment(&train.example(i), shape, ViewPolicy::CeStandard, augment_cfg, rng) {
                    buf.extend_from_slice(&v);
                }
            }
            let x = images_to_tensor(buf, chunk.len(), shape, device)?;
            let feats = if cfg.fine_tune_encoder { enc.forward(&x, Mode::Train)? } else { enc.embed(&x)? };
            let labels: Vec<u32> = chunk.iter().map(|&i| train.label(i)).collect();
            let grads = loss_ce(&head.forward(&feats)?, &labels)?.backward()?;
            opt.step(&grads, cosine_lr(cfg.lr, step, total))?;
            step += 1;
        }
    }
    if encoder.checksum()? != before {
        return Err(Error::internal("source encoder changed during downstream transfer"));
    }
    let test: Vec<usize> = (0..downstream.test.len()).collect();
    evaluate_accuracy(&enc, &ClassifierHead::Single(head), &downstream.test, &test, None, device)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, GlyphConfig};
    use crate::model::EncoderArch;
    use crate::rng::rng_from_seed;

    #[test]
    fn copy_only_and_deterministic() {
        let ds = generate(&GlyphConfig::downstream("down", 7, 3)).unwrap();
        let enc = Encoder::new(EncoderArch::resnet_tiny(3), &mut rng_from_seed(0)).unwrap();
        let before = enc.checksum().unwrap();
        let cfg = TransferConfig { epochs: 1, ..Default::default() };
        let aug = AugmentConfig::default();
        let a = downstream_transfer(&enc, &ds, "cl", &cfg, &aug, &mut rng_from_seed(3), &Device::Cpu).unwrap();
        let b = downstream_transfer(&enc, &ds, "cl", &cfg, &aug, &mut rng_from_seed(3), &Device::Cpu).unwrap();
        assert_eq!(a, b);
        assert_eq!(enc.checksum().unwrap(), before);
        let bad = TransferConfig { num_classes: Some(5), ..cfg };
        assert!(matches!(
            downstream_transfer(&enc, &ds, "cl", &bad, &aug, &mut rng_from_seed(3), &Device::Cpu),
            Err(Error::Config(_))
        ));
    }
}
