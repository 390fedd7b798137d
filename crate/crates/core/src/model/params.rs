use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Named trainable parameters. Iteration order is the sorted name order,
/// which keeps checksums and optimizer traversal deterministic.
#[derive(Debug, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        self.vars.insert(name.into(), Var::from_tensor(&value)?);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Var> {
        self.vars.get(name).ok_or_else(|| Error::internal(format!("missing parameter `{name}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        Ok(self.get(name)?.as_tensor())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Copies every tensor into fresh storage.
    pub fn deep_clone(&self) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (k, v) in &self.vars {
            vars.insert(k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?);
        }
        Ok(Self { vars })
    }

    /// Detached copies of the current values.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars.iter().map(|(k, v)| Ok((k.clone(), v.as_tensor().detach().copy()?))).collect()
    }

    /// Overwrites values in place, keeping variable identity.
    pub fn assign(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (k, v) in &self.vars {
            let src = values.get(k).ok_or_else(|| Error::internal(format!("no value for `{k}`")))?;
            if src.dims() != v.dims() {
                return Err(Error::internal(format!(
                    "shape mismatch for `{k}`: {:?} vs {:?}",
                    src.dims(),
                    v.dims()
                )));
            }
            v.set(src)?;
        }
        Ok(())
    }

    pub fn from_tensors(values: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut s = Self::new();
        for (k, v) in values {
            s.insert(k, v)?;
        }
        Ok(s)
    }
}

pub(crate) fn randn(rng: &mut Rng, dims: &[usize], std: f64) -> Result<Tensor> {
    let n: usize = dims.iter().product();
    let normal = Normal::new(0.0f32, std as f32).map_err(|e| Error::internal(e.to_string()))?;
    let data: Vec<f32> = (0..n).map(|_| normal.sample(rng)).collect();
    Ok(Tensor::from_vec(data, dims, &Device::Cpu)?)
}

pub(crate) fn zeros(dims: &[usize]) -> Result<Tensor> {
    Ok(Tensor::zeros(dims, DType::F32, &Device::Cpu)?)
}

pub(crate) fn ones(dims: &[usize]) -> Result<Tensor> {
    Ok(Tensor::ones(dims, DType::F32, &Device::Cpu)?)
}

/// SHA-256 over names, shapes and little-endian values, in name order.
pub fn checksum<'a, I>(tensors: I) -> Result<String>
where
    I: IntoIterator<Item = (&'a String, &'a Tensor)>,
{
    let mut h = Sha256::new();
    for (name, t) in tensors {
        h.update(name.as_bytes());
        for d in t.dims() {
            h.update((*d as u64).to_le_bytes());
        }
        let values = t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
        for v in values {
            h.update(v.to_le_bytes());
        }
    }
    Ok(format!("{:x}", h.finalize()))
}
