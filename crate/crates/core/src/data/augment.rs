use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ImageShape, LabeledExample};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewPolicy {
    /// One lightly perturbed view for cross-entropy training.
    CeStandard,
    /// Two independently perturbed views of the same image.
    ContrastiveTwoView,
    /// The image unchanged.
    EvalNone,
}

impl FromStr for ViewPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce_standard" => Ok(ViewPolicy::CeStandard),
            "contrastive_two_view" => Ok(ViewPolicy::ContrastiveTwoView),
            "eval_none" => Ok(ViewPolicy::EvalNone),
            other => Err(Error::config(format!("unknown view policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Maximum translation in pixels (zero fill).
    pub max_shift: usize,
    /// Per-channel multiplicative jitter amplitude for `ce_standard`.
    pub ce_jitter: f32,
    /// Per-channel multiplicative jitter amplitude for contrastive views.
    pub contrastive_jitter: f32,
    pub grayscale_prob: f64,
    pub noise_std: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { max_shift: 2, ce_jitter: 0.1, contrastive_jitter: 0.2, grayscale_prob: 0.2, noise_std: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Views {
    Single(Vec<f32>),
    Pair(Vec<f32>, Vec<f32>),
}

pub fn augment(
    example: &LabeledExample<'_>,
    shape: ImageShape,
    policy: ViewPolicy,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Views {
    match policy {
        ViewPolicy::EvalNone => Views::Single(example.image.to_vec()),
        ViewPolicy::CeStandard => Views::Single(ce_view(example.image, shape, cfg, rng)),
        ViewPolicy::ContrastiveTwoView => {
            let a = contrastive_view(example.image, shape, cfg, rng);
            let b = contrastive_view(example.image, shape, cfg, rng);
            Views::Pair(a, b)
        }
    }
}

pub(crate) fn ce_view(img: &[f32], shape: ImageShape, cfg: &AugmentConfig, rng: &mut Rng) -> Vec<f32> {
    let mut out = shift(img, shape, cfg.max_shift, rng);
    jitter(&mut out, shape, cfg.ce_jitter, rng);
    out
}

pub(crate) fn contrastive_view(img: &[f32], shape: ImageShape, cfg: &AugmentConfig, rng: &mut Rng) -> Vec<f32> {
    let mut out = shift(img, shape, cfg.max_shift, rng);
    jitter(&mut out, shape, cfg.contrastive_jitter, rng);
    if shape.channels > 1 && rng.random_bool(cfg.grayscale_prob) {
        grayscale(&mut out, shape);
    }
    if cfg.noise_std > 0.0 {
        let n = Normal::new(0.0f32, cfg.noise_std).expect("noise std is positive");
        for v in &mut out {
            *v = (*v + n.sample(rng)).clamp(0.0, 1.0);
        }
    }
    out
}

fn shift(img: &[f32], shape: ImageShape, max_shift: usize, rng: &mut Rng) -> Vec<f32> {
    if max_shift == 0 {
        return img.to_vec();
    }
    let m = max_shift as i64;
    let dy = rng.random_range(-m..=m);
    let dx = rng.random_range(-m..=m);
    let (h, w) = (shape.height as i64, shape.width as i64);
    let mut out = vec![0.0; img.len()];
    for c in 0..shape.channels as i64 {
        for y in 0..h {
            let sy = y - dy;
            if sy < 0 || sy >= h {
                continue;
            }
            for x in 0..w {
                let sx = x - dx;
                if sx < 0 || sx >= w {
                    continue;
                }
                out[((c * h + y) * w + x) as usize] = img[((c * h + sy) * w + sx) as usize];
            }
        }
    }
    out
}

fn jitter(img: &mut [f32], shape: ImageShape, amplitude: f32, rng: &mut Rng) {
    if amplitude <= 0.0 {
        return;
    }
    let plane = shape.height * shape.width;
    let brightness = rng.random_range(-amplitude..amplitude);
    for c in 0..shape.channels {
        let gain = 1.0 + brightness + rng.random_range(-amplitude..amplitude) * 0.5;
        for v in &mut img[c * plane..(c + 1) * plane] {
            *v = (*v * gain).clamp(0.0, 1.0);
        }
    }
}

fn grayscale(img: &mut [f32], shape: ImageShape) {
    let plane = shape.height * shape.width;
    for p in 0..plane {
        let g = (0..shape.channels).map(|c| img[c * plane + p]).sum::<f32>() / shape.channels as f32;
        for c in 0..shape.channels {
            img[c * plane + p] = g;
        }
    }
}
