//! Output layers: a growing single head, per-task heads and the projection
//! MLP used by contrastive objectives.

use std::collections::BTreeMap;

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use super::params::{randn, zeros};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Standard deviation of freshly added class rows.
pub const NEW_ROW_STD: f64 = 0.01;

/// `embedding -> logits` over an ordered list of class ids.
#[derive(Debug)]
pub struct LinearHead {
    weight: Var,
    bias: Var,
    classes: Vec<u32>,
}

impl LinearHead {
    pub fn new(in_dim: usize, classes: Vec<u32>, rng: &mut Rng) -> Result<Self> {
        check_unique(&[], &classes)?;
        let weight = Var::from_tensor(&randn(rng, &[classes.len(), in_dim], NEW_ROW_STD)?)?;
        let bias = Var::from_tensor(&zeros(&[classes.len()])?)?;
        Ok(Self { weight, bias, classes })
    }

    pub fn from_tensors(weight: Tensor, bias: Tensor, classes: Vec<u32>) -> Result<Self> {
        if weight.dims().len() != 2 || weight.dim(0)? != classes.len() || bias.dims() != [classes.len()] {
            return Err(Error::internal("head tensors do not match the class list"));
        }
        Ok(Self { weight: Var::from_tensor(&weight)?, bias: Var::from_tensor(&bias)?, classes })
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn width(&self) -> usize {
        self.classes.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn weight(&self) -> &Tensor {
        self.weight.as_tensor()
    }

    pub fn bias(&self) -> &Tensor {
        self.bias.as_tensor()
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    /// Row of `class`, if the head covers it.
    pub fn position(&self, class: u32) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        if features.dims().len() != 2 || features.dim(1)? != self.in_dim() {
            return Err(Error::argument(format!(
                "head expects (B, {}), got {:?}",
                self.in_dim(),
                features.dims()
            )));
        }
        Ok(features.matmul(&self.weight.as_tensor().t()?)?.broadcast_add(self.bias.as_tensor())?)
    }

    /// Appends rows for `new_classes`. Existing rows are copied bit for bit;
    /// new rows are small zero-mean noise with zero bias.
    pub fn expand(&mut self, new_classes: &[u32], rng: &mut Rng) -> Result<()> {
        check_unique(&self.classes, new_classes)?;
        if new_classes.is_empty() {
            return Ok(());
        }
        let fresh_w = randn(rng, &[new_classes.len(), self.in_dim()], NEW_ROW_STD)?;
        let w = Tensor::cat(&[&self.weight.as_tensor().detach(), &fresh_w], 0)?;
        let b = Tensor::cat(&[&self.bias.as_tensor().detach(), &zeros(&[new_classes.len()])?], 0)?;
        self.weight = Var::from_tensor(&w)?;
        self.bias = Var::from_tensor(&b)?;
        self.classes.extend_from_slice(new_classes);
        Ok(())
    }

    pub fn deep_clone(&self) -> Result<Self> {
        Self::from_tensors(self.weight().copy()?, self.bias().copy()?, self.classes.clone())
    }
}

fn check_unique(existing: &[u32], new: &[u32]) -> Result<()> {
    for (i, c) in new.iter().enumerate() {
        if existing.contains(c) || new[..i].contains(c) {
            return Err(Error::protocol(format!("class {c} is already covered by the head")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Single,
    PerTask,
    Projection,
}

/// The classifier `g_ψ`: one shared head, or one head per task.
#[derive(Debug)]
pub enum ClassifierHead {
    Single(LinearHead),
    PerTask(BTreeMap<usize, LinearHead>),
}

impl ClassifierHead {
    pub fn kind(&self) -> HeadKind {
        match self {
            ClassifierHead::Single(_) => HeadKind::Single,
            ClassifierHead::PerTask(_) => HeadKind::PerTask,
        }
    }

    /// Logits of the selected head. `task_id` is required for per-task heads
    /// and must be absent for a single head.
    pub fn forward(&self, features: &Tensor, task_id: Option<usize>) -> Result<Tensor> {
        self.select(task_id)?.forward(features)
    }

    pub fn select(&self, task_id: Option<usize>) -> Result<&LinearHead> {
        match (self, task_id) {
            (ClassifierHead::Single(h), None) => Ok(h),
            (ClassifierHead::Single(_), Some(t)) => {
                Err(Error::protocol(format!("single head does not take a task id (got {t})")))
            }
            (ClassifierHead::PerTask(_), None) => Err(Error::protocol("per-task heads need a task id")),
            (ClassifierHead::PerTask(map), Some(t)) => {
                map.get(&t).ok_or_else(|| Error::protocol(format!("no head for task {t}")))
            }
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        match self {
            ClassifierHead::Single(h) => h.vars(),
            ClassifierHead::PerTask(map) => map.values().flat_map(|h| h.vars()).collect(),
        }
    }

    /// All covered classes, in head order.
    pub fn classes(&self) -> Vec<u32> {
        match self {
            ClassifierHead::Single(h) => h.classes().to_vec(),
            ClassifierHead::PerTask(map) => map.values().flat_map(|h| h.classes().iter().copied()).collect(),
        }
    }

    pub fn deep_clone(&self) -> Result<Self> {
        Ok(match self {
            ClassifierHead::Single(h) => ClassifierHead::Single(h.deep_clone()?),
            ClassifierHead::PerTask(map) => ClassifierHead::PerTask(
                map.iter().map(|(&t, h)| Ok((t, h.deep_clone()?))).collect::<Result<_>>()?,
            ),
        })
    }

    pub(crate) fn tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        match self {
            ClassifierHead::Single(h) => {
                out.insert("head.single.weight".to_string(), h.weight().clone());
                out.insert("head.single.bias".to_string(), h.bias().clone());
            }
            ClassifierHead::PerTask(map) => {
                for (t, h) in map {
                    out.insert(format!("head.task{t}.weight"), h.weight().clone());
                    out.insert(format!("head.task{t}.bias"), h.bias().clone());
                }
            }
        }
        out
    }
}

/// Two-layer MLP `embedding -> hidden -> out`, ReLU in between.
#[derive(Debug)]
pub struct ProjectionHead {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

impl ProjectionHead {
    pub fn new(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            w1: Var::from_tensor(&randn(rng, &[hidden, in_dim], (2.0 / in_dim as f64).sqrt())?)?,
            b1: Var::from_tensor(&zeros(&[hidden])?)?,
            w2: Var::from_tensor(&randn(rng, &[out_dim, hidden], (1.0 / hidden as f64).sqrt())?)?,
            b2: Var::from_tensor(&zeros(&[out_dim])?)?,
        })
    }

    pub fn from_tensors(w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Result<Self> {
        Ok(Self {
            w1: Var::from_tensor(&w1)?,
            b1: Var::from_tensor(&b1)?,
            w2: Var::from_tensor(&w2)?,
            b2: Var::from_tensor(&b2)?,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.w2.dims()[0]
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.w1.clone(), self.b1.clone(), self.w2.clone(), self.b2.clone()]
    }

    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let h = features.matmul(&self.w1.as_tensor().t()?)?.broadcast_add(self.b1.as_tensor())?.relu()?;
        Ok(h.matmul(&self.w2.as_tensor().t()?)?.broadcast_add(self.b2.as_tensor())?)
    }

    pub fn deep_clone(&self) -> Result<Self> {
        Self::from_tensors(
            self.w1.as_tensor().copy()?,
            self.b1.as_tensor().copy()?,
            self.w2.as_tensor().copy()?,
            self.b2.as_tensor().copy()?,
        )
    }

    pub(crate) fn tensors(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        BTreeMap::from([
            (format!("{prefix}.w1"), self.w1.as_tensor().clone()),
            (format!("{prefix}.b1"), self.b1.as_tensor().clone()),
            (format!("{prefix}.w2"), self.w2.as_tensor().clone()),
            (format!("{prefix}.b2"), self.b2.as_tensor().clone()),
        ])
    }

    pub(crate) fn named_vars(&self) -> [(&'static str, &Var); 4] {
        [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]
    }
}
