use std::f64::consts::PI;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::Result;

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v ← μ v + (g + λ θ)`, `θ ← θ − η v`.
#[derive(Debug)]
pub struct Sgd {
    vars: Vec<Var>,
    velocity: Vec<Option<Tensor>>,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn new(vars: Vec<Var>, momentum: f64, weight_decay: f64) -> Self {
        let velocity = vec![None; vars.len()];
        Self { vars, velocity, momentum, weight_decay }
    }

    /// Variables without a gradient are left untouched.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        for (v, vel) in self.vars.iter().zip(self.velocity.iter_mut()) {
            let Some(g) = grads.get(v.as_tensor()) else { continue };
            // detached throughout: a tracked velocity would chain every step's graph together
            let theta = v.as_tensor().detach();
            let mut d = g.detach();
            if self.weight_decay > 0.0 {
                d = (d + theta.affine(self.weight_decay, 0.0)?)?;
            }
            if self.momentum > 0.0 {
                d = match vel.as_ref() {
                    Some(prev) => (prev.affine(self.momentum, 0.0)? + d)?,
                    None => d,
                };
                *vel = Some(d.clone());
            }
            v.set(&(theta - d.affine(lr, 0.0)?)?)?;
        }
        Ok(())
    }
}

/// Learning rate at `step` of `total` under half-cosine decay to zero.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * 0.5 * (1.0 + (PI * step as f64 / total as f64).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn minimizes_a_quadratic() {
        let w = Var::new(&[3.0f32, -2.0], &Device::Cpu).unwrap();
        let mut opt = Sgd::new(vec![w.clone()], 0.9, 0.0);
        for _ in 0..200 {
            let g = w.as_tensor().sqr().unwrap().sum_all().unwrap().backward().unwrap();
            opt.step(&g, 0.05).unwrap();
        }
        let v = w.as_tensor().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-3), "{v:?}");
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 10), 0.1);
        assert!(cosine_lr(0.1, 10, 10).abs() < 1e-12);
        assert!((cosine_lr(0.1, 5, 10) - 0.05).abs() < 1e-12);
    }
}
