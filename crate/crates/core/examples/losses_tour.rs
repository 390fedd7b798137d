//! Evaluates every training loss on a hand-built batch and prints the value.

use candle_core::{Device, Tensor};
use clrep::algorithms::{loss_ce, loss_infonce, loss_ird, loss_lwf_kd, loss_ssil, loss_supcon, mas_penalty, SsilBatch};
use std::collections::BTreeMap;

fn t(rows: &[&[f32]]) -> clrep::Result<Tensor> {
    let n = rows.len();
    let d = rows[0].len();
    Ok(Tensor::from_vec(rows.concat(), (n, d), &Device::Cpu)?)
}

fn main() -> clrep::Result<()> {
    let logits = t(&[&[2.0, 0.5, -1.0, 0.0], &[0.1, 0.2, 1.5, -0.3]])?;
    println!("cross-entropy        {:.6}", loss_ce(&logits, &[0, 2])?.to_scalar::<f32>()?);

    let frozen = t(&[&[1.0, 0.0], &[0.0, 1.0]])?;
    let current = t(&[&[0.0, 1.0], &[1.0, 0.0]])?;
    println!("LwF distillation T=2 {:.6}", loss_lwf_kd(&current, &frozen, 2.0)?.to_scalar::<f32>()?);

    // two tasks of two classes; one current-task sample, one replayed sample
    let cur = t(&[&[0.3, -0.2, 1.0, 0.4]])?;
    let mem = t(&[&[1.2, 0.1, 0.5, 0.9]])?;
    let old = t(&[&[0.5, 0.0], &[1.0, -0.5]])?;
    let ssil = loss_ssil(SsilBatch {
        current_logits: &cur,
        current_targets: &[2],
        memory_logits: Some(&mem),
        memory_targets: &[0],
        frozen_logits: Some(&old),
        blocks: &[0..2, 2..4],
        temperature: 2.0,
    })?;
    println!(
        "SS-IL                separated CE {:.6} + task-wise KD {:.6}",
        ssil.separated_ce.to_scalar::<f32>()?,
        ssil.kd.to_scalar::<f32>()?
    );

    let z = t(&[&[1.0, 0.0], &[0.8, 0.6], &[0.0, 1.0], &[-0.6, 0.8]])?;
    println!("SupCon τ=0.1         {:.6}", loss_supcon(&z, &[0, 0, 1, 1], 0.1)?.to_scalar::<f32>()?);

    let past = t(&[&[1.0, 0.0], &[0.0, 1.0], &[0.6, 0.8], &[-1.0, 0.0]])?;
    let ids = [0, 1, 2, 3];
    println!("IRD                  {:.6}", loss_ird(&z, &ids, &past, &ids, 0.2, 0.01)?.to_scalar::<f32>()?);

    let q = t(&[&[1.0, 0.0]])?;
    let k = t(&[&[0.6, 0.8]])?;
    let queue = t(&[&[0.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]])?;
    println!("InfoNCE τ=0.2        {:.6}", loss_infonce(&q, &k, &queue, 0.2)?.to_scalar::<f32>()?);

    let theta = vec![("w".to_string(), t(&[&[1.5, -0.5]])?)];
    let anchor = BTreeMap::from([("w".to_string(), t(&[&[1.0, 0.0]])?)]);
    let omega = BTreeMap::from([("w".to_string(), t(&[&[2.0, 0.5]])?)]);
    println!("MAS penalty λ=1      {:.6}", mas_penalty(&theta, &anchor, &omega, 1.0)?.to_scalar::<f32>()?);
    Ok(())
}
