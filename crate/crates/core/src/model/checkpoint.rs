//! Checkpoints: a safetensors container of named arrays plus a JSON sidecar
//! describing the architecture, head layout, task index and seed streams.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::contrastive::{ContrastiveState, KeyQueue};
use super::encoder::{Encoder, EncoderArch};
use super::heads::{ClassifierHead, HeadKind, LinearHead, ProjectionHead};
use super::params::ParamStore;
use super::Model;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadLayout {
    pub classifier: Option<HeadKind>,
    /// Class ids of the single head, row order.
    pub single: Vec<u32>,
    /// Task id → class ids of its head.
    pub per_task: BTreeMap<usize, Vec<u32>>,
    /// `(hidden, out)` of the projection MLP.
    pub projection: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveMeta {
    pub momentum: f64,
    pub temperature: f64,
    pub queue_size: usize,
    pub queue_dim: usize,
    pub queue_ptr: usize,
    pub queue_filled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture: EncoderArch,
    pub embedding_dim: usize,
    pub head_layout: HeadLayout,
    pub task_index: usize,
    /// Seeds of the named random streams used for this task.
    pub rng_streams: BTreeMap<String, u64>,
    pub contrastive: Option<ContrastiveMeta>,
    /// Names of auxiliary arrays (regularizer state) stored alongside the model.
    pub extras: Vec<String>,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub contrastive: Option<ContrastiveState>,
    pub extras: BTreeMap<String, Tensor>,
    pub meta: CheckpointMeta,
}

fn head_layout(model: &Model) -> Result<HeadLayout> {
    let mut layout = HeadLayout {
        classifier: model.classifier.as_ref().map(|h| h.kind()),
        single: Vec::new(),
        per_task: BTreeMap::new(),
        projection: None,
    };
    match &model.classifier {
        Some(ClassifierHead::Single(h)) => layout.single = h.classes().to_vec(),
        Some(ClassifierHead::PerTask(map)) => {
            layout.per_task = map.iter().map(|(&t, h)| (t, h.classes().to_vec())).collect()
        }
        None => {}
    }
    if let Some(p) = &model.projection {
        let hidden = p.vars()[0].dims()[0];
        layout.projection = Some((hidden, p.out_dim()));
    }
    Ok(layout)
}

fn encoder_tensors(prefix: &str, enc: &Encoder, out: &mut HashMap<String, Tensor>) -> Result<()> {
    for (k, v) in enc.params().iter() {
        out.insert(format!("{prefix}.param.{k}"), v.as_tensor().clone());
    }
    for (k, v) in enc.buffers() {
        out.insert(format!("{prefix}.buffer.{k}"), v.clone());
    }
    Ok(())
}

pub fn save_checkpoint(
    dir: &Path,
    stem: &str,
    model: &Model,
    contrastive: Option<&ContrastiveState>,
    extras: &BTreeMap<String, Tensor>,
    task_index: usize,
    rng_streams: BTreeMap<String, u64>,
) -> Result<CheckpointMeta> {
    fs::create_dir_all(dir)?;
    let mut tensors: HashMap<String, Tensor> = HashMap::new();
    encoder_tensors("encoder", &model.encoder, &mut tensors)?;
    if let Some(h) = &model.classifier {
        tensors.extend(h.tensors());
    }
    if let Some(p) = &model.projection {
        tensors.extend(p.tensors("proj"));
    }
    let contrastive_meta = match contrastive {
        Some(c) => {
            encoder_tensors("key_encoder", &c.key_encoder, &mut tensors)?;
            tensors.extend(c.key_projection.tensors("key_proj"));
            let q = c.queue();
            tensors.insert(
                "queue".into(),
                Tensor::from_vec(q.raw().to_vec(), (q.capacity(), q.dim()), &Device::Cpu)?,
            );
            Some(ContrastiveMeta {
                momentum: c.momentum,
                temperature: c.temperature,
                queue_size: q.capacity(),
                queue_dim: q.dim(),
                queue_ptr: q.ptr(),
                queue_filled: q.filled(),
            })
        }
        None => None,
    };
    for (k, v) in extras {
        tensors.insert(format!("extra.{k}"), v.clone());
    }
    let meta = CheckpointMeta {
        architecture: model.encoder.arch().clone(),
        embedding_dim: model.encoder.embedding_dim(),
        head_layout: head_layout(model)?,
        task_index,
        rng_streams,
        contrastive: contrastive_meta,
        extras: extras.keys().cloned().collect(),
    };
    candle_core::safetensors::save(&tensors, dir.join(format!("{stem}.safetensors")))?;
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}

fn take(map: &mut HashMap<String, Tensor>, key: &str) -> Result<Tensor> {
    map.remove(key).ok_or_else(|| Error::config(format!("checkpoint is missing `{key}`")))
}

fn take_encoder(prefix: &str, arch: &EncoderArch, map: &mut HashMap<String, Tensor>) -> Result<Encoder> {
    let p = format!("{prefix}.param.");
    let b = format!("{prefix}.buffer.");
    let mut params = BTreeMap::new();
    let mut buffers = BTreeMap::new();
    let keys: Vec<String> = map.keys().cloned().collect();
    for k in keys {
        if let Some(name) = k.strip_prefix(&p) {
            params.insert(name.to_string(), take(map, &k)?);
        } else if let Some(name) = k.strip_prefix(&b) {
            buffers.insert(name.to_string(), take(map, &k)?);
        }
    }
    Encoder::from_parts(arch.clone(), ParamStore::from_tensors(params)?, buffers)
}

fn take_projection(prefix: &str, map: &mut HashMap<String, Tensor>) -> Result<ProjectionHead> {
    ProjectionHead::from_tensors(
        take(map, &format!("{prefix}.w1"))?,
        take(map, &format!("{prefix}.b1"))?,
        take(map, &format!("{prefix}.w2"))?,
        take(map, &format!("{prefix}.b2"))?,
    )
}

pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<Checkpoint> {
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let mut map = candle_core::safetensors::load(dir.join(format!("{stem}.safetensors")), &Device::Cpu)?;
    let encoder = take_encoder("encoder", &meta.architecture, &mut map)?;
    let layout = &meta.head_layout;
    let classifier = match layout.classifier {
        Some(HeadKind::Single) => Some(ClassifierHead::Single(LinearHead::from_tensors(
            take(&mut map, "head.single.weight")?,
            take(&mut map, "head.single.bias")?,
            layout.single.clone(),
        )?)),
        Some(HeadKind::PerTask) => {
            let mut heads = BTreeMap::new();
            for (&t, classes) in &layout.per_task {
                heads.insert(
                    t,
                    LinearHead::from_tensors(
                        take(&mut map, &format!("head.task{t}.weight"))?,
                        take(&mut map, &format!("head.task{t}.bias"))?,
                        classes.clone(),
                    )?,
                );
            }
            Some(ClassifierHead::PerTask(heads))
        }
        Some(HeadKind::Projection) => return Err(Error::config("projection is not a classifier layout")),
        None => None,
    };
    let projection = match layout.projection {
        Some(_) => Some(take_projection("proj", &mut map)?),
        None => None,
    };
    let contrastive = match &meta.contrastive {
        Some(c) => {
            let key_encoder = take_encoder("key_encoder", &meta.architecture, &mut map)?;
            let key_projection = take_projection("key_proj", &mut map)?;
            let raw = take(&mut map, "queue")?.flatten_all()?.to_vec1::<f32>()?;
            let queue = KeyQueue::from_raw(c.queue_size, c.queue_dim, raw, c.queue_ptr, c.queue_filled)?;
            Some(ContrastiveState::from_parts(key_encoder, key_projection, queue, c.momentum, c.temperature))
        }
        None => None,
    };
    let mut extras = BTreeMap::new();
    for name in &meta.extras {
        extras.insert(name.clone(), take(&mut map, &format!("extra.{name}"))?);
    }
    Ok(Checkpoint { model: Model { encoder, classifier, projection }, contrastive, extras, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;
    use crate::rng::rng_from_seed;

    #[test]
    fn round_trip_preserves_everything() {
        let mut rng = rng_from_seed(3);
        let enc = Encoder::new(EncoderArch::resnet_tiny(3), &mut rng).unwrap();
        let mut model = Model::new(enc).with_projection(16, 8, &mut rng).unwrap();
        model.classifier = Some(ClassifierHead::Single(LinearHead::new(32, vec![4, 2, 9], &mut rng).unwrap()));
        let x = super::super::params::randn(&mut rng, &[4, 3, 12, 12], 1.0).unwrap();
        model.forward_features(&x, Mode::Train).unwrap();
        let mut c = ContrastiveState::new(&model.encoder, model.projection().unwrap(), 5, 0.99, 0.2).unwrap();
        let k = super::super::params::randn(&mut rng, &[2, 8], 1.0).unwrap();
        c.queue_push(&k).unwrap();
        let extras = BTreeMap::from([("omega.a".to_string(), Tensor::new(&[1f32, 2.0], &Device::Cpu).unwrap())]);
        let dir = tempfile::tempdir().unwrap();
        let streams = BTreeMap::from([("init".to_string(), 17u64)]);
        let meta = save_checkpoint(dir.path(), "ckpt", &model, Some(&c), &extras, 2, streams).unwrap();
        let back = load_checkpoint(dir.path(), "ckpt").unwrap();
        assert_eq!(back.meta, meta);
        assert_eq!(back.model.encoder.checksum().unwrap(), model.encoder.checksum().unwrap());
        let bc = back.contrastive.unwrap();
        assert_eq!(bc.queue(), c.queue());
        assert_eq!(bc.key_encoder.checksum().unwrap(), c.key_encoder.checksum().unwrap());
        assert_eq!(back.extras["omega.a"].to_vec1::<f32>().unwrap(), vec![1.0, 2.0]);
        let f = model.encoder.embed(&x).unwrap();
        let l0 = model.classifier.as_ref().unwrap().forward(&f, None).unwrap().to_vec2::<f32>().unwrap();
        let l1 = back.model.classifier.as_ref().unwrap().forward(&f, None).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(l0, l1);
        assert_eq!(back.meta.head_layout.single, vec![4, 2, 9]);
    }
}
