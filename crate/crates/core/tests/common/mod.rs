//! Brute-force oracles for the training losses, shared by the loss tests and
//! the acceptance run. Every check panics on mismatch.

#![allow(dead_code)]

pub mod sampler;

use std::collections::BTreeMap;
use std::ops::Range;

use candle_core::{DType, Device, Tensor, Var};
use clrep::model::ParamStore;
use clrep::algorithms::{loss_ce, loss_infonce, loss_ird, loss_lwf_kd, loss_ssil, loss_supcon, mas_penalty, SsilBatch};

const TOL: f64 = 1e-6;
const FD_REL: f64 = 1e-3;

fn mat(rows: &[&[f64]]) -> Tensor {
    Tensor::from_vec(rows.concat(), (rows.len(), rows[0].len()), &Device::Cpu).unwrap()
}

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.to_dtype(DType::F64).unwrap().to_vec2::<f64>().unwrap()
}

// ---- scalar oracles ------------------------------------------------------

fn log_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

fn kl(p_logits: &[f64], q_logits: &[f64], t: f64) -> f64 {
    let lp = log_softmax(&p_logits.iter().map(|x| x / t).collect::<Vec<_>>());
    let lq = log_softmax(&q_logits.iter().map(|x| x / t).collect::<Vec<_>>());
    lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ce_oracle(logits: &[Vec<f64>], labels: &[u32]) -> f64 {
    logits.iter().zip(labels).map(|(l, &y)| -log_softmax(l)[y as usize]).sum::<f64>() / labels.len() as f64
}

fn kd_oracle(current: &[Vec<f64>], frozen: &[Vec<f64>], t: f64) -> f64 {
    current.iter().zip(frozen).map(|(c, f)| kl(f, c, t)).sum::<f64>() / current.len() as f64
}

fn ssil_oracle(
    cur: &[Vec<f64>],
    cur_y: &[u32],
    mem: &[Vec<f64>],
    mem_y: &[u32],
    frozen: &[Vec<f64>],
    blocks: &[Range<usize>],
    t: f64,
) -> (f64, f64) {
    let n = (cur.len() + mem.len()) as f64;
    let last = blocks.last().unwrap();
    let mut ce = 0.0;
    for (l, &y) in cur.iter().zip(cur_y) {
        ce -= log_softmax(&l[last.clone()])[y as usize - last.start];
    }
    for (l, &y) in mem.iter().zip(mem_y) {
        let b = blocks.iter().find(|b| b.contains(&(y as usize))).unwrap();
        ce -= log_softmax(&l[b.clone()])[y as usize - b.start];
    }
    let mut kd = 0.0;
    for (l, f) in cur.iter().chain(mem).zip(frozen) {
        for b in &blocks[..blocks.len() - 1] {
            kd += kl(&f[b.clone()], &l[b.clone()], t);
        }
    }
    (ce / n, kd / n)
}

fn supcon_oracle(z: &[Vec<f64>], labels: &[u32], tau: f64) -> f64 {
    let z: Vec<Vec<f64>> = z.iter().map(|v| unit(v)).collect();
    let b = z.len();
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..b {
        let positives: Vec<usize> = (0..b).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let denom: f64 = (0..b).filter(|&a| a != i).map(|a| (dot(&z[i], &z[a]) / tau).exp()).sum();
        let mut s = 0.0;
        for &p in &positives {
            s -= ((dot(&z[i], &z[p]) / tau).exp() / denom).ln();
        }
        total += s / positives.len() as f64;
    }
    total / anchors as f64
}

fn ird_oracle(cur: &[Vec<f64>], past: &[Vec<f64>], tc: f64, tp: f64) -> f64 {
    let cur: Vec<Vec<f64>> = cur.iter().map(|v| unit(v)).collect();
    let past: Vec<Vec<f64>> = past.iter().map(|v| unit(v)).collect();
    let b = cur.len();
    let mut total = 0.0;
    for i in 0..b {
        let others: Vec<usize> = (0..b).filter(|&j| j != i).collect();
        let sc: Vec<f64> = others.iter().map(|&j| dot(&cur[i], &cur[j]) / tc).collect();
        let sp: Vec<f64> = others.iter().map(|&j| dot(&past[i], &past[j]) / tp).collect();
        total += kl(&sp, &sc, 1.0);
    }
    total / b as f64
}

fn infonce_oracle(q: &[Vec<f64>], k: &[Vec<f64>], queue: &[Vec<f64>], tau: f64) -> f64 {
    let mut total = 0.0;
    for (qi, ki) in q.iter().zip(k) {
        let (qi, ki) = (unit(qi), unit(ki));
        let mut logits = vec![dot(&qi, &ki) / tau];
        logits.extend(queue.iter().map(|n| dot(&qi, n) / tau));
        total -= log_softmax(&logits)[0];
    }
    total / q.len() as f64
}

// ---- value oracles --------------------------------------------------------

pub fn ce_matches_oracle() {
    let l = vec![vec![1.3, -0.2, 0.4, 2.0], vec![0.0, 0.1, -1.0, 0.5], vec![-2.0, 3.0, 0.3, 0.0]];
    let y = [3, 0, 1];
    let got = scalar(&loss_ce(&mat(&[&l[0], &l[1], &l[2]]), &y).unwrap());
    assert!((got - ce_oracle(&l, &y)).abs() < TOL);
    let two = scalar(&loss_ce(&mat(&[&[1.0, 0.0]]), &[0]).unwrap());
    assert!((two - 0.31326168751822286).abs() < TOL);
}

pub fn lwf_kd_matches_oracle() {
    let c = vec![vec![0.2, 1.1, -0.3], vec![1.5, 0.0, 0.4]];
    let f = vec![vec![1.0, 0.5, 0.0], vec![-0.5, 2.0, 0.1]];
    for t in [1.0, 2.0, 4.0] {
        let got = scalar(&loss_lwf_kd(&mat(&[&c[0], &c[1]]), &mat(&[&f[0], &f[1]]), t).unwrap());
        assert!((got - kd_oracle(&c, &f, t)).abs() < TOL, "T={t}");
    }
    let hand = scalar(&loss_lwf_kd(&mat(&[&[0.0, 2.0]]), &mat(&[&[2.0, 0.0]]), 1.0).unwrap());
    assert!((hand - 1.5231883119115306).abs() < TOL);
}

pub fn ssil_matches_oracle_on_two_tasks_of_two_classes() {
    let blocks = [0..2, 2..4];
    let cur = vec![vec![0.3, -0.2, 1.0, 0.4], vec![-1.0, 0.7, 0.2, 0.9]];
    let mem = vec![vec![1.2, 0.1, 0.5, 0.9], vec![0.0, -0.4, 2.0, 0.3]];
    let frozen = vec![vec![0.5, 0.0], vec![-0.2, 0.4], vec![1.0, -0.5], vec![0.1, 0.3]];
    let (cur_y, mem_y) = ([2u32, 3], [0u32, 1]);
    let loss = loss_ssil(SsilBatch {
        current_logits: &mat(&[&cur[0], &cur[1]]),
        current_targets: &cur_y,
        memory_logits: Some(&mat(&[&mem[0], &mem[1]])),
        memory_targets: &mem_y,
        frozen_logits: Some(&mat(&[&frozen[0], &frozen[1], &frozen[2], &frozen[3]])),
        blocks: &blocks,
        temperature: 2.0,
    })
    .unwrap();
    let (ce, kd) = ssil_oracle(&cur, &cur_y, &mem, &mem_y, &frozen, &blocks, 2.0);
    assert!((scalar(&loss.separated_ce) - ce).abs() < TOL);
    assert!((scalar(&loss.kd) - kd).abs() < TOL);
    assert!((scalar(&loss.total().unwrap()) - ce - kd).abs() < TOL);
}

pub fn ssil_first_task_is_plain_ce() {
    let l = vec![vec![0.4, -1.0], vec![2.0, 0.5]];
    let loss = loss_ssil(SsilBatch {
        current_logits: &mat(&[&l[0], &l[1]]),
        current_targets: &[1, 0],
        memory_logits: None,
        memory_targets: &[],
        frozen_logits: None,
        blocks: &[0..2],
        temperature: 2.0,
    })
    .unwrap();
    assert!((scalar(&loss.total().unwrap()) - ce_oracle(&l, &[1, 0])).abs() < TOL);
}

pub fn supcon_matches_exhaustive_sum() {
    let z = vec![vec![1.0, 0.2, 0.0], vec![0.7, 0.7, 0.1], vec![-0.3, 1.0, 0.5], vec![0.0, 0.4, -1.0]];
    let y = [0, 0, 1, 1];
    for tau in [0.1, 0.5, 1.0] {
        let got = scalar(&loss_supcon(&mat(&[&z[0], &z[1], &z[2], &z[3]]), &y, tau).unwrap());
        assert!((got - supcon_oracle(&z, &y, tau)).abs() < TOL, "τ={tau}");
    }
    // an anchor without positives is skipped
    let y = [0, 0, 1, 2];
    let got = scalar(&loss_supcon(&mat(&[&z[0], &z[1], &z[2], &z[3]]), &y, 0.2).unwrap());
    assert!((got - supcon_oracle(&z, &y, 0.2)).abs() < TOL);
}

pub fn ird_matches_oracle_on_three_instances() {
    let cur = vec![vec![1.0, 0.0], vec![0.6, 0.8], vec![-0.8, 0.6]];
    let past = vec![vec![1.0, 0.1], vec![0.0, 1.0], vec![-1.0, 0.2]];
    let ids = [4, 9, 1];
    let got = scalar(&loss_ird(&mat(&[&cur[0], &cur[1], &cur[2]]), &ids, &mat(&[&past[0], &past[1], &past[2]]), &ids, 0.2, 0.1).unwrap());
    assert!((got - ird_oracle(&cur, &past, 0.2, 0.1)).abs() < TOL);
    let same = scalar(&loss_ird(&mat(&[&cur[0], &cur[1], &cur[2]]), &ids, &mat(&[&cur[0], &cur[1], &cur[2]]), &ids, 0.3, 0.3).unwrap());
    assert!(same.abs() < TOL);
}

pub fn infonce_matches_oracle_on_one_plus_two_logits() {
    let q = vec![vec![0.8, 0.6]];
    let k = vec![vec![1.0, 0.0]];
    let queue = vec![vec![0.0, 1.0], vec![-1.0, 0.0]];
    let got = scalar(&loss_infonce(&mat(&[&q[0]]), &mat(&[&k[0]]), &mat(&[&queue[0], &queue[1]]), 0.5).unwrap());
    let by_hand = -log_softmax(&[0.8 / 0.5, 0.6 / 0.5, -0.8 / 0.5])[0];
    assert!((got - by_hand).abs() < TOL);
    assert!((got - infonce_oracle(&q, &k, &queue, 0.5)).abs() < TOL);
}

pub fn mas_penalty_matches_oracle() {
    let theta = vec![("a".to_string(), mat(&[&[1.5, -0.5]])), ("b".to_string(), mat(&[&[0.25]]))];
    let anchor = BTreeMap::from([("a".to_string(), mat(&[&[1.0, 0.0]])), ("b".to_string(), mat(&[&[0.0]]))]);
    let omega = BTreeMap::from([("a".to_string(), mat(&[&[2.0, 0.5]])), ("b".to_string(), mat(&[&[4.0]]))]);
    let got = scalar(&mas_penalty(&theta, &anchor, &omega, 0.7).unwrap());
    let oracle = 0.7 * (2.0 * 0.25 + 0.5 * 0.25 + 4.0 * 0.0625);
    assert!((got - oracle).abs() < TOL);
    let scalar_case = scalar(
        &mas_penalty(
            &[("w".into(), mat(&[&[0.5]]))],
            &BTreeMap::from([("w".into(), mat(&[&[0.0]]))]),
            &BTreeMap::from([("w".into(), mat(&[&[2.0]]))]),
            1.0,
        )
        .unwrap(),
    );
    assert!((scalar_case - 0.5).abs() < TOL);
}

// ---- finite differences ---------------------------------------------------

/// Toy model: `out = X · W`, with `X` fixed. Compares the autodiff gradient of
/// `loss(out)` in W against central differences.
fn check_gradient(x: &Tensor, w0: &[Vec<f64>], loss: impl Fn(&Tensor) -> Tensor) {
    let w_rows: Vec<&[f64]> = w0.iter().map(Vec::as_slice).collect();
    let w = Var::from_tensor(&mat(&w_rows)).unwrap();
    let l = loss(&x.matmul(w.as_tensor()).unwrap());
    let grads = l.backward().unwrap();
    let g = rows(grads.get(w.as_tensor()).expect("gradient reaches W"));

    let h = 1e-6;
    let eval = |i: usize, j: usize, d: f64| {
        let mut w = w0.to_vec();
        w[i][j] += d;
        let r: Vec<&[f64]> = w.iter().map(Vec::as_slice).collect();
        scalar(&loss(&x.matmul(&mat(&r)).unwrap()))
    };
    let scale = g.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-6);
    for i in 0..w0.len() {
        for j in 0..w0[0].len() {
            let fd = (eval(i, j, h) - eval(i, j, -h)) / (2.0 * h);
            let err = (g[i][j] - fd).abs() / fd.abs().max(g[i][j].abs()).max(scale * 1e-2);
            assert!(err < FD_REL, "∂/∂W[{i}][{j}]: autodiff {} vs fd {fd} (rel {err:.2e})", g[i][j]);
        }
    }
}

fn toy_inputs() -> (Tensor, Vec<Vec<f64>>) {
    let x = mat(&[&[1.0, 0.5, -0.3], &[0.2, -1.0, 0.8], &[-0.7, 0.3, 0.4], &[0.9, 0.9, -0.1]]);
    let w = vec![vec![0.3, -0.2, 0.5, 0.1], vec![-0.4, 0.6, 0.2, -0.3], vec![0.1, 0.25, -0.5, 0.7]];
    (x, w)
}

pub fn ce_gradient() {
    let (x, w) = toy_inputs();
    check_gradient(&x, &w, |o| loss_ce(o, &[0, 3, 1, 2]).unwrap());
}

pub fn lwf_kd_gradient() {
    let (x, w) = toy_inputs();
    let frozen = mat(&[&[0.5, 0.0, 1.0, -0.2], &[0.1, 0.2, 0.3, 0.4], &[-1.0, 0.0, 1.0, 0.0], &[0.3, 0.3, -0.6, 0.9]]);
    check_gradient(&x, &w, |o| loss_lwf_kd(o, &frozen, 2.0).unwrap());
}

pub fn ssil_gradient() {
    let (x, w) = toy_inputs();
    let frozen = mat(&[&[0.5, 0.0], &[0.1, 0.2], &[-1.0, 0.0], &[0.3, 0.3]]);
    check_gradient(&x, &w, |o| {
        let cur = o.narrow(0, 0, 2).unwrap();
        let mem = o.narrow(0, 2, 2).unwrap();
        loss_ssil(SsilBatch {
            current_logits: &cur,
            current_targets: &[2, 3],
            memory_logits: Some(&mem),
            memory_targets: &[1, 0],
            frozen_logits: Some(&frozen),
            blocks: &[0..2, 2..4],
            temperature: 2.0,
        })
        .unwrap()
        .total()
        .unwrap()
    });
}

pub fn supcon_gradient() {
    let (x, w) = toy_inputs();
    check_gradient(&x, &w, |o| loss_supcon(o, &[0, 0, 1, 1], 0.5).unwrap());
}

pub fn ird_gradient() {
    let (x, w) = toy_inputs();
    let past = mat(&[&[1.0, 0.0, 0.2, 0.0], &[0.0, 1.0, 0.0, 0.3], &[0.5, 0.5, 0.5, 0.0], &[-0.2, 0.1, 0.9, 0.4]]);
    check_gradient(&x, &w, |o| loss_ird(o, &[0, 1, 2, 3], &past, &[0, 1, 2, 3], 0.5, 0.2).unwrap());
}

pub fn infonce_gradient() {
    let (x, w) = toy_inputs();
    let keys = mat(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 0.0, 1.0]]);
    let queue = mat(&[&[0.5, 0.5, 0.5, 0.5], &[-0.5, 0.5, -0.5, 0.5]]);
    check_gradient(&x, &w, |o| loss_infonce(o, &keys, &queue, 0.5).unwrap());
}

pub fn mas_penalty_gradient() {
    let (x, w) = toy_inputs();
    let anchor = BTreeMap::from([("out".to_string(), mat(&[&[0.0, 0.1, 0.2, 0.3] as &[f64]; 4]))]);
    let omega = BTreeMap::from([("out".to_string(), mat(&[&[1.0, 2.0, 0.5, 0.0], &[0.3, 0.3, 0.3, 0.3], &[2.0, 0.0, 1.0, 1.0], &[0.1, 0.2, 0.3, 0.4]]))]);
    check_gradient(&x, &w, |o| mas_penalty(&[("out".to_string(), o.clone())], &anchor, &omega, 0.8).unwrap());
}

pub fn mas_gradient_pulls_towards_a_snapshot_anchor() {
    let mut store = ParamStore::new();
    store.insert("w", mat(&[&[1.0, -2.0]])).unwrap();
    let anchor = store.snapshot().unwrap();
    let w = store.get("w").unwrap();
    w.set(&mat(&[&[1.5, -1.0]])).unwrap();
    let omega = BTreeMap::from([("w".to_string(), mat(&[&[2.0, 0.5]]))]);
    let p = mas_penalty(&[("w".to_string(), w.as_tensor().clone())], &anchor, &omega, 1.0).unwrap();
    let g = rows(p.backward().unwrap().get(w.as_tensor()).unwrap());
    // 2·Ω·(θ−θ*)
    assert!((g[0][0] - 2.0).abs() < TOL && (g[0][1] - 1.0).abs() < TOL, "{g:?}");
}

/// Every value and gradient check, by name.
pub const ALL: &[(&str, fn())] = &[
    ("ce_matches_oracle", ce_matches_oracle),
    ("lwf_kd_matches_oracle", lwf_kd_matches_oracle),
    ("ssil_matches_oracle_on_two_tasks_of_two_classes", ssil_matches_oracle_on_two_tasks_of_two_classes),
    ("ssil_first_task_is_plain_ce", ssil_first_task_is_plain_ce),
    ("supcon_matches_exhaustive_sum", supcon_matches_exhaustive_sum),
    ("ird_matches_oracle_on_three_instances", ird_matches_oracle_on_three_instances),
    ("infonce_matches_oracle_on_one_plus_two_logits", infonce_matches_oracle_on_one_plus_two_logits),
    ("mas_penalty_matches_oracle", mas_penalty_matches_oracle),
    ("ce_gradient", ce_gradient),
    ("lwf_kd_gradient", lwf_kd_gradient),
    ("ssil_gradient", ssil_gradient),
    ("supcon_gradient", supcon_gradient),
    ("ird_gradient", ird_gradient),
    ("infonce_gradient", infonce_gradient),
    ("mas_penalty_gradient", mas_penalty_gradient),
    ("mas_gradient_pulls_towards_a_snapshot_anchor", mas_gradient_pulls_towards_a_snapshot_anchor),
];
