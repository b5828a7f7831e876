//! Plain-value evaluation of every building block, written directly against
//! tensor data with no tape involvement. This is the independent route used
//! by equivalence checks: the batched tape path and this module must agree,
//! and neither shares code with the other.

use crate::tensor::Tensor;

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

/// `y = x @ w + b` for a single row; `w` is `(in, out)`.
pub fn linear(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let (ind, out) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(x.len(), ind);
    let mut y = b.data().to_vec();
    for (i, &xv) in x.iter().enumerate() {
        let row = w.row(i);
        for j in 0..out {
            y[j] += xv * row[j];
        }
    }
    y
}

pub fn mlp2(w1: &Tensor, b1: &Tensor, w2: &Tensor, b2: &Tensor, x: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = linear(w1, b1, x).into_iter().map(gelu).collect();
    linear(w2, b2, &h)
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let istd = 1.0 / (var + eps).sqrt();
    x.iter()
        .enumerate()
        .map(|(k, v)| (v - mean) * istd * gain[k] + bias[k])
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / z).collect()
}

/// Plain GRU cell parameters, extracted from a store.
#[derive(Debug, Clone)]
pub struct GruValues {
    pub wz: (Tensor, Tensor),
    pub uz: Tensor,
    pub wr: (Tensor, Tensor),
    pub ur: Tensor,
    pub wn: (Tensor, Tensor),
    pub un: Tensor,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    // x @ w for a single row, no bias
    let (ind, out) = (w.shape()[0], w.shape()[1]);
    let mut y = vec![0.0; out];
    for (i, &xv) in x.iter().enumerate().take(ind) {
        let row = w.row(i);
        for j in 0..out {
            y[j] += xv * row[j];
        }
    }
    y
}

pub fn gru_step(p: &GruValues, x: &[f64], h: &[f64]) -> Vec<f64> {
    let zx = linear(&p.wz.0, &p.wz.1, x);
    let zh = matvec(&p.uz, h);
    let z: Vec<f64> = zx.iter().zip(&zh).map(|(a, b)| sigmoid(a + b)).collect();
    let rx = linear(&p.wr.0, &p.wr.1, x);
    let rh = matvec(&p.ur, h);
    let r: Vec<f64> = rx.iter().zip(&rh).map(|(a, b)| sigmoid(a + b)).collect();
    let nx = linear(&p.wn.0, &p.wn.1, x);
    let nh = matvec(&p.un, h);
    let n: Vec<f64> = nx
        .iter()
        .zip(nh.iter().zip(&r))
        .map(|(a, (b, rv))| (a + rv * b).tanh())
        .collect();
    z.iter()
        .zip(n.iter().zip(h))
        .map(|(zv, (nv, hv))| (1.0 - zv) * nv + zv * hv)
        .collect()
}

pub fn gru_run(p: &GruValues, steps: &[Vec<f64>], hidden: usize) -> Vec<f64> {
    let mut h = vec![0.0; hidden];
    for x in steps {
        h = gru_step(p, x, &h);
    }
    h
}

/// Bidirectional run: concat(last forward state, last backward state)
/// projected by `proj`.
pub fn bigru(
    fwd: &GruValues,
    bwd: &GruValues,
    proj: &(Tensor, Tensor),
    steps: &[Vec<f64>],
    hidden: usize,
) -> Vec<f64> {
    let hf = gru_run(fwd, steps, hidden);
    let rev: Vec<Vec<f64>> = steps.iter().rev().cloned().collect();
    let hb = gru_run(bwd, &rev, hidden);
    let mut cat = hf;
    cat.extend(hb);
    linear(&proj.0, &proj.1, &cat)
}
