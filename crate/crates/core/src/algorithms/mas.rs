//! Memory-aware synapses: output-sensitivity importance and the quadratic
//! drift penalty.

use std::collections::BTreeMap;

use candle_core::{Tensor, Var};

use crate::error::{Error, Result};

pub type Importance = BTreeMap<String, Tensor>;

/// `Ω_i = mean_x |∂‖f(x)‖²/∂θ_i|`, one backward pass per sample.
///
/// `inputs` are batches; each row is treated as one sample. `f` maps a
/// one-row batch to its outputs.
pub fn mas_importance<F>(params: &[(String, Var)], inputs: &[Tensor], mut f: F) -> Result<Importance>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    let mut acc: Importance = BTreeMap::new();
    for (name, v) in params {
        acc.insert(name.clone(), v.as_tensor().zeros_like()?);
    }
    let mut n = 0usize;
    for batch in inputs {
        for i in 0..batch.dim(0)? {
            let x = batch.narrow(0, i, 1)?;
            let out = f(&x)?;
            let grads = out.sqr()?.sum_all()?.backward()?;
            for (name, v) in params {
                if let Some(g) = grads.get(v.as_tensor()) {
                    let slot = acc.get_mut(name).expect("initialized above");
                    *slot = (&*slot + g.abs()?)?;
                }
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::argument("importance needs at least one sample"));
    }
    for t in acc.values_mut() {
        *t = t.affine(1.0 / n as f64, 0.0)?.detach();
    }
    Ok(acc)
}

/// `Ω_prev + Ω_new`, elementwise; names present in only one side are kept.
pub fn accumulate_importance(prev: &Importance, new: &Importance) -> Result<Importance> {
    let mut out = prev.clone();
    for (k, v) in new {
        let merged = match prev.get(k) {
            Some(p) if p.dims() == v.dims() => (p + v)?,
            Some(p) => {
                return Err(Error::internal(format!("importance `{k}` changed shape: {:?} vs {:?}", p.dims(), v.dims())))
            }
            None => v.clone(),
        };
        out.insert(k.clone(), merged);
    }
    Ok(out)
}

/// `λ Σ_i Ω_i (θ_i − θ*_i)²` over every parameter that has an importance entry.
pub fn mas_penalty(params: &[(String, Tensor)], anchor: &Importance, omega: &Importance, lambda: f64) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (name, p) in params {
        let Some(o) = omega.get(name) else { continue };
        let a = anchor
            .get(name)
            .ok_or_else(|| Error::internal(format!("no anchor for parameter `{name}`")))?;
        if p.dims() != a.dims() || p.dims() != o.dims() {
            return Err(Error::internal(format!(
                "shape mismatch for `{name}`: params {:?}, anchor {:?}, importance {:?}",
                p.dims(),
                a.dims(),
                o.dims()
            )));
        }
        // anchor and importance are constants even if handed over still attached to a graph
        let (a, o) = (a.detach().to_dtype(p.dtype())?, o.detach().to_dtype(p.dtype())?);
        let term = (o * (p - a)?.sqr()?)?.sum_all()?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    match total {
        Some(t) => Ok(t.affine(lambda, 0.0)?),
        None => match params.first() {
            Some((_, p)) => Ok(p.sum_all()?.affine(0.0, 0.0)?),
            None => Err(Error::argument("no parameters")),
        },
    }
}
