//! Momentum key encoder and negative-key queue for momentum contrast.

use candle_core::{Device, Tensor};
use log::warn;

use super::encoder::Encoder;
use super::heads::ProjectionHead;
use super::params::ParamStore;
use crate::error::{Error, Result};

const NORM_TOL: f32 = 1e-5;

#[derive(Debug)]
pub struct ContrastiveState {
    pub key_encoder: Encoder,
    pub key_projection: ProjectionHead,
    queue: KeyQueue,
    pub momentum: f64,
    pub temperature: f64,
}

impl ContrastiveState {
    /// Key networks start as exact copies of the query networks.
    pub fn new(
        encoder: &Encoder,
        projection: &ProjectionHead,
        queue_size: usize,
        momentum: f64,
        temperature: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum {momentum} outside [0, 1]")));
        }
        if temperature <= 0.0 {
            return Err(Error::config("temperature must be positive"));
        }
        Ok(Self {
            key_encoder: encoder.deep_clone()?,
            key_projection: projection.deep_clone()?,
            queue: KeyQueue::new(queue_size, projection.out_dim())?,
            momentum,
            temperature,
        })
    }

    pub fn from_parts(
        key_encoder: Encoder,
        key_projection: ProjectionHead,
        queue: KeyQueue,
        momentum: f64,
        temperature: f64,
    ) -> Self {
        Self { key_encoder, key_projection, queue, momentum, temperature }
    }

    pub fn queue(&self) -> &KeyQueue {
        &self.queue
    }

    /// `key ← m·key + (1−m)·query` for every encoder and projection parameter.
    pub fn ema_update(&mut self, query_encoder: &Encoder, query_projection: &ProjectionHead) -> Result<()> {
        ema_params(self.key_encoder.params(), query_encoder.params(), self.momentum)?;
        for ((_, k), (_, q)) in self.key_projection.named_vars().into_iter().zip(query_projection.named_vars()) {
            ema_var(k, q.as_tensor(), self.momentum)?;
        }
        Ok(())
    }

    pub fn queue_push(&mut self, keys: &Tensor) -> Result<()> {
        self.queue.push(keys)
    }
}

/// Elementwise `key ← m·key + (1−m)·query` over matching parameter stores.
pub fn ema_params(key: &ParamStore, query: &ParamStore, momentum: f64) -> Result<()> {
    if key.len() != query.len() {
        return Err(Error::internal("key and query parameter sets differ"));
    }
    for ((kn, kv), (qn, qv)) in key.iter().zip(query.iter()) {
        if kn != qn {
            return Err(Error::internal(format!("parameter name mismatch `{kn}` vs `{qn}`")));
        }
        ema_var(kv, qv.as_tensor(), momentum)?;
    }
    Ok(())
}

fn ema_var(key: &candle_core::Var, query: &Tensor, momentum: f64) -> Result<()> {
    if key.dims() != query.dims() {
        return Err(Error::internal(format!("EMA shape mismatch {:?} vs {:?}", key.dims(), query.dims())));
    }
    if momentum == 1.0 {
        return Ok(());
    }
    if momentum == 0.0 {
        key.set(&query.detach().copy()?)?;
        return Ok(());
    }
    let next = ((key.as_tensor().detach() * momentum)? + (query.detach() * (1.0 - momentum))?)?;
    key.set(&next)?;
    Ok(())
}

/// Ring buffer of `capacity` unit-norm key vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyQueue {
    capacity: usize,
    dim: usize,
    data: Vec<f32>,
    ptr: usize,
    filled: usize,
}

impl KeyQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::config("queue needs positive size and dimension"));
        }
        Ok(Self { capacity, dim, data: vec![0.0; capacity * dim], ptr: 0, filled: 0 })
    }

    pub fn from_raw(capacity: usize, dim: usize, data: Vec<f32>, ptr: usize, filled: usize) -> Result<Self> {
        if data.len() != capacity * dim || ptr >= capacity.max(1) || filled > capacity {
            return Err(Error::internal("inconsistent queue state"));
        }
        Ok(Self { capacity, dim, data, ptr, filled })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ptr(&self) -> usize {
        self.ptr
    }

    /// Number of slots holding a key.
    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// The filled slots as a `(filled, dim)` tensor, slot order.
    pub fn keys(&self) -> Result<Tensor> {
        if self.filled == 0 {
            return Err(Error::protocol("the negative-key queue is empty"));
        }
        let rows = self.data[..self.filled * self.dim].to_vec();
        Ok(Tensor::from_vec(rows, (self.filled, self.dim), &Device::Cpu)?)
    }

    /// Overwrites the oldest slots with `keys` (B×dim). Keys that are not unit
    /// norm are normalized with a warning. With `B > capacity` only the last
    /// `capacity` keys are kept.
    pub fn push(&mut self, keys: &Tensor) -> Result<()> {
        let (b, d) = keys.dims2()?;
        if d != self.dim {
            return Err(Error::argument(format!("queue holds {}-dim keys, got {d}", self.dim)));
        }
        let rows = keys.detach().to_dtype(candle_core::DType::F32)?.to_vec2::<f32>()?;
        let start = b.saturating_sub(self.capacity);
        if start > 0 {
            // the skipped keys would have been overwritten anyway
            self.ptr = (self.ptr + start) % self.capacity;
        }
        let mut warned = false;
        for mut row in rows.into_iter().skip(start) {
            let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            if (norm - 1.0).abs() > NORM_TOL {
                if !warned {
                    warn!("normalizing non-unit keys pushed to the queue (norm {norm})");
                    warned = true;
                }
                let n = norm.max(1e-12);
                row.iter_mut().for_each(|v| *v /= n);
            }
            self.data[self.ptr * self.dim..(self.ptr + 1) * self.dim].copy_from_slice(&row);
            self.ptr = (self.ptr + 1) % self.capacity;
        }
        self.filled = (self.filled + b).min(self.capacity);
        Ok(())
    }
}
