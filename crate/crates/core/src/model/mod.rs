//! Encoder / output-layer decomposition and the contrastive machinery.

mod checkpoint;
mod contrastive;
mod encoder;
mod heads;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, ContrastiveMeta, HeadLayout};
pub use contrastive::{ema_params, ContrastiveState, KeyQueue};
pub use encoder::{Encoder, EncoderArch};
pub use heads::{ClassifierHead, HeadKind, LinearHead, ProjectionHead, NEW_ROW_STD};
pub use params::{checksum, ParamStore};

use candle_core::{Tensor, Var};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `f_θ = g_ψ ∘ f_φ`, plus an optional projection MLP for contrastive objectives.
#[derive(Debug)]
pub struct Model {
    pub encoder: Encoder,
    pub classifier: Option<ClassifierHead>,
    pub projection: Option<ProjectionHead>,
}

impl Model {
    pub fn new(encoder: Encoder) -> Self {
        Self { encoder, classifier: None, projection: None }
    }

    pub fn with_projection(mut self, hidden: usize, out_dim: usize, rng: &mut Rng) -> Result<Self> {
        self.projection = Some(ProjectionHead::new(self.encoder.embedding_dim(), hidden, out_dim, rng)?);
        Ok(self)
    }

    pub fn forward_features(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.encoder.forward(x, mode)
    }

    pub fn forward_logits(&mut self, x: &Tensor, mode: Mode, task_id: Option<usize>) -> Result<Tensor> {
        let head = self.classifier.as_ref().ok_or_else(|| Error::protocol("model has no classifier head"))?;
        // validate the head selection before paying for the encoder pass
        head.select(task_id)?;
        let f = self.encoder.forward(x, mode)?;
        self.classifier.as_ref().expect("checked").forward(&f, task_id)
    }

    pub fn projection(&self) -> Result<&ProjectionHead> {
        self.projection.as_ref().ok_or_else(|| Error::protocol("model has no projection head"))
    }

    /// Every trainable variable: encoder, classifier and projection.
    pub fn trainable_vars(&self) -> Vec<Var> {
        let mut v = self.encoder.params().vars();
        if let Some(h) = &self.classifier {
            v.extend(h.vars());
        }
        if let Some(p) = &self.projection {
            v.extend(p.vars());
        }
        v
    }

    pub fn deep_clone(&self) -> Result<Self> {
        Ok(Self {
            encoder: self.encoder.deep_clone()?,
            classifier: self.classifier.as_ref().map(|h| h.deep_clone()).transpose()?,
            projection: self.projection.as_ref().map(|p| p.deep_clone()).transpose()?,
        })
    }
}

/// Evaluation-mode embeddings.
pub fn forward_features(encoder: &Encoder, x: &Tensor) -> Result<Tensor> {
    encoder.embed(x)
}

/// Evaluation-mode logits of the selected head.
pub fn forward_logits(encoder: &Encoder, head: &ClassifierHead, x: &Tensor, task_id: Option<usize>) -> Result<Tensor> {
    head.select(task_id)?;
    head.forward(&encoder.embed(x)?, task_id)
}

/// Appends class rows to a single head; see [`LinearHead::expand`].
pub fn expand_single_head(head: &mut ClassifierHead, new_classes: &[u32], rng: &mut Rng) -> Result<()> {
    match head {
        ClassifierHead::Single(h) => h.expand(new_classes, rng),
        ClassifierHead::PerTask(_) => Err(Error::protocol("per-task heads are not expanded")),
    }
}
