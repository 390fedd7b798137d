//! Compact residual CNN encoder with batch normalization.

use std::collections::BTreeMap;

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use super::params::{checksum, ones, randn, zeros, ParamStore};
use super::Mode;
use crate::error::{Error, Result};
use crate::rng::Rng;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderArch {
    pub id: String,
    pub in_channels: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
}

impl EncoderArch {
    /// Three single-block stages, 32-dim embedding. Sized for single-core desk runs.
    pub fn resnet_tiny(in_channels: usize) -> Self {
        Self { id: "resnet_tiny".into(), in_channels, stage_widths: vec![8, 16, 32], blocks_per_stage: 1 }
    }

    /// Four stages, 128-dim embedding.
    pub fn resnet_compact(in_channels: usize) -> Self {
        Self { id: "resnet_compact".into(), in_channels, stage_widths: vec![16, 32, 64, 128], blocks_per_stage: 1 }
    }

    /// ResNet-18 layout (two basic blocks per stage, 512-dim embedding) with a 3×3 stem.
    pub fn resnet18(in_channels: usize) -> Self {
        Self { id: "resnet18".into(), in_channels, stage_widths: vec![64, 128, 256, 512], blocks_per_stage: 2 }
    }

    pub fn preset(id: &str, in_channels: usize) -> Result<Self> {
        match id {
            "resnet_tiny" => Ok(Self::resnet_tiny(in_channels)),
            "resnet_compact" => Ok(Self::resnet_compact(in_channels)),
            "resnet18" => Ok(Self::resnet18(in_channels)),
            other => Err(Error::config(format!("unknown encoder architecture `{other}`"))),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        *self.stage_widths.last().expect("at least one stage")
    }

    fn validate(&self) -> Result<()> {
        if self.stage_widths.is_empty() || self.blocks_per_stage == 0 || self.in_channels == 0 {
            return Err(Error::config("encoder needs input channels, stages and blocks"));
        }
        Ok(())
    }
}

/// Encoder parameters plus batch-norm running statistics.
#[derive(Debug)]
pub struct Encoder {
    arch: EncoderArch,
    params: ParamStore,
    buffers: BTreeMap<String, Tensor>,
}

impl Encoder {
    pub fn new(arch: EncoderArch, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamStore::new();
        let mut buffers = BTreeMap::new();
        let stem = arch.stage_widths[0];
        add_conv(&mut params, "stem.conv", arch.in_channels, stem, 3, rng)?;
        add_bn(&mut params, &mut buffers, "stem.bn", stem)?;
        let mut cin = stem;
        for (s, &w) in arch.stage_widths.iter().enumerate() {
            for b in 0..arch.blocks_per_stage {
                let p = format!("stage{s}.block{b}");
                let stride = block_stride(s, b);
                add_conv(&mut params, &format!("{p}.conv1"), cin, w, 3, rng)?;
                add_bn(&mut params, &mut buffers, &format!("{p}.bn1"), w)?;
                add_conv(&mut params, &format!("{p}.conv2"), w, w, 3, rng)?;
                add_bn(&mut params, &mut buffers, &format!("{p}.bn2"), w)?;
                if stride != 1 || cin != w {
                    add_conv(&mut params, &format!("{p}.down.conv"), cin, w, 1, rng)?;
                    add_bn(&mut params, &mut buffers, &format!("{p}.down.bn"), w)?;
                }
                cin = w;
            }
        }
        Ok(Self { arch, params, buffers })
    }

    pub fn from_parts(
        arch: EncoderArch,
        params: ParamStore,
        buffers: BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        arch.validate()?;
        Ok(Self { arch, params, buffers })
    }

    pub fn arch(&self) -> &EncoderArch {
        &self.arch
    }

    pub fn embedding_dim(&self) -> usize {
        self.arch.embedding_dim()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor> {
        &self.buffers
    }

    pub fn set_buffers(&mut self, buffers: BTreeMap<String, Tensor>) -> Result<()> {
        for (k, v) in &self.buffers {
            let new = buffers.get(k).ok_or_else(|| Error::internal(format!("missing buffer `{k}`")))?;
            if new.dims() != v.dims() {
                return Err(Error::internal(format!("buffer `{k}` shape mismatch")));
            }
        }
        self.buffers = buffers;
        Ok(())
    }

    pub fn deep_clone(&self) -> Result<Self> {
        let buffers = self.buffers.iter().map(|(k, v)| Ok((k.clone(), v.copy()?))).collect::<Result<_>>()?;
        Ok(Self { arch: self.arch.clone(), params: self.params.deep_clone()?, buffers })
    }

    /// Checksum of parameters and normalization statistics.
    pub fn checksum(&self) -> Result<String> {
        let params = self.params.snapshot()?;
        checksum(params.iter().chain(self.buffers.iter()))
    }

    /// `(B, C, H, W) -> (B, embedding_dim)`. Training mode normalizes with
    /// batch statistics and updates the running averages; evaluation mode
    /// uses the running averages.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut updates = Vec::new();
        let out = self.run(x, mode, &mut updates)?;
        for (k, v) in updates {
            self.buffers.insert(k, v);
        }
        Ok(out)
    }

    /// Evaluation-mode forward through a shared reference.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, Mode::Eval, &mut Vec::new())
    }

    fn run(&self, x: &Tensor, mode: Mode, updates: &mut Vec<(String, Tensor)>) -> Result<Tensor> {
        let dims = x.dims();
        if dims.len() != 4 || dims[1] != self.arch.in_channels {
            return Err(Error::argument(format!(
                "encoder expects (B, {}, H, W), got {dims:?}",
                self.arch.in_channels
            )));
        }
        if dims[0] == 0 {
            return Err(Error::argument("empty batch"));
        }
        let mut h = self.conv(x, "stem.conv", 1, 1)?;
        h = self.bn(&h, "stem.bn", mode, updates)?.relu()?;
        let mut cin = self.arch.stage_widths[0];
        for s in 0..self.arch.stage_widths.len() {
            let w = self.arch.stage_widths[s];
            for b in 0..self.arch.blocks_per_stage {
                let p = format!("stage{s}.block{b}");
                let stride = block_stride(s, b);
                let mut y = self.conv(&h, &format!("{p}.conv1"), stride, 1)?;
                y = self.bn(&y, &format!("{p}.bn1"), mode, updates)?.relu()?;
                y = self.conv(&y, &format!("{p}.conv2"), 1, 1)?;
                y = self.bn(&y, &format!("{p}.bn2"), mode, updates)?;
                let shortcut = if stride != 1 || cin != w {
                    let d = self.conv(&h, &format!("{p}.down.conv"), stride, 0)?;
                    self.bn(&d, &format!("{p}.down.bn"), mode, updates)?
                } else {
                    h.clone()
                };
                h = (y + shortcut)?.relu()?;
                cin = w;
            }
        }
        Ok(h.mean(D::Minus1)?.mean(D::Minus1)?)
    }

    fn conv(&self, x: &Tensor, name: &str, stride: usize, padding: usize) -> Result<Tensor> {
        let w = self.params.tensor(&format!("{name}.weight"))?;
        Ok(x.conv2d(w, padding, stride, 1, 1)?)
    }

    fn bn(&self, x: &Tensor, name: &str, mode: Mode, updates: &mut Vec<(String, Tensor)>) -> Result<Tensor> {
        let c = x.dim(1)?;
        let gamma = self.params.tensor(&format!("{name}.weight"))?.reshape((1, c, 1, 1))?;
        let beta = self.params.tensor(&format!("{name}.bias"))?.reshape((1, c, 1, 1))?;
        let mean_key = format!("{name}.running_mean");
        let var_key = format!("{name}.running_var");
        let rm = &self.buffers[&mean_key];
        let rv = &self.buffers[&var_key];
        let normalized = match mode {
            Mode::Train => {
                let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
                let centered = x.broadcast_sub(&mean)?;
                let var = centered.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
                let out = centered.broadcast_div(&(var.clone() + BN_EPS)?.sqrt()?)?;
                let n = x.dim(0)? * x.dim(2)? * x.dim(3)?;
                let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
                let batch_mean = mean.flatten_all()?.detach();
                let batch_var = (var.flatten_all()?.detach() * unbias)?;
                updates.push((mean_key, ((rm * (1.0 - BN_MOMENTUM))? + (batch_mean * BN_MOMENTUM)?)?));
                updates.push((var_key, ((rv * (1.0 - BN_MOMENTUM))? + (batch_var * BN_MOMENTUM)?)?));
                out
            }
            Mode::Eval => {
                let rm = rm.reshape((1, c, 1, 1))?;
                let rv = rv.reshape((1, c, 1, 1))?;
                x.broadcast_sub(&rm)?.broadcast_div(&(rv + BN_EPS)?.sqrt()?)?
            }
        };
        Ok(normalized.broadcast_mul(&gamma)?.broadcast_add(&beta)?)
    }
}

fn block_stride(stage: usize, block: usize) -> usize {
    if stage > 0 && block == 0 {
        2
    } else {
        1
    }
}

fn add_conv(p: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, rng: &mut Rng) -> Result<()> {
    // He initialization for ReLU networks
    let std = (2.0 / (cin * k * k) as f64).sqrt();
    p.insert(format!("{name}.weight"), randn(rng, &[cout, cin, k, k], std)?)
}

fn add_bn(p: &mut ParamStore, b: &mut BTreeMap<String, Tensor>, name: &str, c: usize) -> Result<()> {
    p.insert(format!("{name}.weight"), ones(&[c])?)?;
    p.insert(format!("{name}.bias"), zeros(&[c])?)?;
    b.insert(format!("{name}.running_mean"), zeros(&[c])?);
    b.insert(format!("{name}.running_var"), ones(&[c])?);
    Ok(())
}

