//! The four per-pair relational features.
//!
//! Content: `r_h = W_Q h_i - W_K h_j`. Time: `r_t = phi_t(t_i - t_j)` on the
//! raw signed interval in hours. Modality: a lookup into a learnable
//! `(M, M, d)` affinity tensor, stored row-major as `(M*M, d)`. Case: the
//! mean over co-observed modalities of a BiGRU run over grid-aligned
//! sequence differences, zero when no modality is co-observed.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::nn::{BiGru, Mlp2};
use crate::params::{ParamId, ParamStore};
use crate::reference;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relation parameters owned by one attention instance. `affinity` and
/// `case_gru` exist only on instances whose active dimensions include the
/// modality / case dimension.
#[derive(Debug, Clone)]
pub struct RelationParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub phi_t: Mlp2,
    pub affinity: Option<ParamId>,
    pub case_gru: Option<BiGru>,
}

impl RelationParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        modalities: Option<usize>,
        with_case: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let std = 1.0 / (width as f64).sqrt();
        let w_q = store.register(
            format!("{name}.w_q"),
            Tensor::randn(&[width, width], std, rng),
        )?;
        let w_k = store.register(
            format!("{name}.w_k"),
            Tensor::randn(&[width, width], std, rng),
        )?;
        let phi_t = Mlp2::new(store, &format!("{name}.phi_t"), 1, width, width, rng)?;
        let affinity = match modalities {
            Some(m) => Some(store.register(
                format!("{name}.e_m"),
                Tensor::randn(&[m * m, width], std, rng),
            )?),
            None => None,
        };
        let case_gru = if with_case {
            Some(BiGru::new(
                store,
                &format!("{name}.case_gru"),
                width,
                width,
                width,
                rng,
            )?)
        } else {
            None
        };
        Ok(RelationParams {
            w_q,
            w_k,
            phi_t,
            affinity,
            case_gru,
        })
    }
}

// ── Value-level extractors (definition-level route, used by the dense
//    reference and unit tests) ──────────────────────────────────────────

/// `W_Q h_i - W_K h_j` on plain values; weights are `(d, d)` as `(in, out)`.
pub fn content_relation(h_i: &[f64], h_j: &[f64], w_q: &Tensor, w_k: &Tensor) -> Vec<f64> {
    let zero = Tensor::zeros(&[w_q.shape()[1]]);
    let qi = reference::linear(w_q, &zero, h_i);
    let kj = reference::linear(w_k, &zero, h_j);
    qi.iter().zip(&kj).map(|(a, b)| a - b).collect()
}

/// `phi_t(t_i - t_j)` on plain values.
pub fn time_relation(
    t_i: f64,
    t_j: f64,
    w1: &Tensor,
    b1: &Tensor,
    w2: &Tensor,
    b2: &Tensor,
) -> Vec<f64> {
    reference::mlp2(w1, b1, w2, b2, &[t_i - t_j])
}

/// Exact lookup `E_m[m_i, m_j]`.
pub fn modality_relation(
    m_i: usize,
    m_j: usize,
    affinity: &Tensor,
    modalities: usize,
) -> Result<Vec<f64>> {
    if m_i >= modalities || m_j >= modalities {
        return Err(Error::OutOfRange {
            what: "modality",
            value: format!("({m_i}, {m_j})"),
            limit: modalities.to_string(),
        });
    }
    Ok(affinity.row(m_i * modalities + m_j).to_vec())
}

/// Mean over co-observed modalities of BiGRU over per-step differences of
/// grid-aligned sequences; the empty co-observed set yields the zero vector.
#[allow(clippy::too_many_arguments)]
pub fn case_relation(
    seqs_i: &[Option<Vec<Vec<f64>>>],
    seqs_j: &[Option<Vec<Vec<f64>>>],
    fwd: &reference::GruValues,
    bwd: &reference::GruValues,
    proj: &(Tensor, Tensor),
    hidden: usize,
    width: usize,
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; width];
    let mut count = 0usize;
    for (si, sj) in seqs_i.iter().zip(seqs_j) {
        let (si, sj) = match (si, sj) {
            (Some(a), Some(b)) => (a, b),
            _ => continue,
        };
        if si.len() != sj.len() {
            return Err(Error::InvalidArgument(
                "case relation requires grid-aligned sequences of equal length".into(),
            ));
        }
        let diffs: Vec<Vec<f64>> = si
            .iter()
            .zip(sj)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        let r = reference::bigru(fwd, bwd, proj, &diffs, hidden);
        for (a, v) in acc.iter_mut().zip(&r) {
            *a += v;
        }
        count += 1;
    }
    if count > 0 {
        for a in &mut acc {
            *a /= count as f64;
        }
    }
    Ok(acc)
}

// ── Tape-side table builders for the batched attention path ──────────────

/// Evaluate `phi_t` on a column of time deltas: `(K, 1)` -> `(K, d)`.
pub fn time_table(
    tape: &mut Tape,
    store: &ParamStore,
    phi_t: &Mlp2,
    deltas: &[f64],
) -> Result<Var> {
    let x = tape.input(Tensor::new(vec![deltas.len(), 1], deltas.to_vec())?);
    phi_t.apply(tape, store, x)
}

/// Ordered case-pair relation table `(B*B, d)` for a grid-aligned cloud:
/// row `ci*B + cj` holds the pair's relation vector. Each pair is computed
/// once per forward pass; token pairs gather from this table.
pub fn case_relation_table(
    tape: &mut Tape,
    store: &ParamStore,
    gru: &BiGru,
    feats: Var,
    cloud: &PointCloud,
    availability: &[Vec<bool>],
) -> Result<Var> {
    let cases = cloud.case_count();
    let mods = availability.first().map(|a| a.len()).unwrap_or(0);
    let width = cloud.width;
    // Per modality: batched difference sequences over all ordered pairs
    // with the modality co-observed.
    let mut per_mod_outputs: Vec<Var> = Vec::new();
    let mut rows_of_pair: Vec<Vec<(usize, usize)>> = vec![Vec::new(); cases * cases];
    let mut flat_rows = 0usize;
    for m in 0..mods {
        let mut pairs = Vec::new();
        for ci in 0..cases {
            for cj in 0..cases {
                if availability[ci][m] && availability[cj][m] {
                    pairs.push((ci, cj));
                }
            }
        }
        if pairs.is_empty() {
            continue;
        }
        let steps_len = cloud.slice(pairs[0].0, m).len();
        for &(ci, cj) in &pairs {
            if cloud.slice(ci, m).len() != steps_len || cloud.slice(cj, m).len() != steps_len {
                return Err(Error::InvalidArgument(format!(
                    "case relation at modality {m}: sequences are not grid-aligned"
                )));
            }
        }
        let mut steps = Vec::with_capacity(steps_len);
        for t in 0..steps_len {
            let idx_i: Rc<Vec<u32>> = Rc::new(
                pairs
                    .iter()
                    .map(|(ci, _)| (cloud.slice(*ci, m).start + t) as u32)
                    .collect(),
            );
            let idx_j: Rc<Vec<u32>> = Rc::new(
                pairs
                    .iter()
                    .map(|(_, cj)| (cloud.slice(*cj, m).start + t) as u32)
                    .collect(),
            );
            let xi = tape.gather_rows(feats, idx_i)?;
            let xj = tape.gather_rows(feats, idx_j)?;
            steps.push(tape.sub(xi, xj)?);
        }
        let out = gru.apply(tape, store, &steps, pairs.len())?;
        let mod_index = per_mod_outputs.len();
        per_mod_outputs.push(out);
        for (row, &(ci, cj)) in pairs.iter().enumerate() {
            rows_of_pair[ci * cases + cj].push((mod_index, row));
        }
        flat_rows += pairs.len();
    }
    if per_mod_outputs.is_empty() {
        return Ok(tape.input(Tensor::zeros(&[cases * cases, width])));
    }
    // Stack modality outputs, then regroup rows by ordered pair and average.
    let stacked = tape.concat(&per_mod_outputs, 0)?;
    let mut base = vec![0usize; per_mod_outputs.len()];
    {
        let mut acc = 0;
        for (i, v) in per_mod_outputs.iter().enumerate() {
            base[i] = acc;
            acc += tape.value(*v).shape()[0];
        }
        debug_assert_eq!(acc, flat_rows);
    }
    let mut gather = Vec::with_capacity(flat_rows);
    let mut offsets = Vec::with_capacity(cases * cases + 1);
    offsets.push(0);
    for pair_rows in &rows_of_pair {
        for &(mi, row) in pair_rows {
            gather.push((base[mi] + row) as u32);
        }
        offsets.push(gather.len());
    }
    let regrouped = tape.gather_rows(stacked, Rc::new(gather))?;
    tape.segment_mean_rows(regrouped, Rc::new(offsets))
}

/// Extract plain GRU values for the reference route.
pub fn gru_values(store: &ParamStore, cell: &crate::nn::GruCell) -> reference::GruValues {
    reference::GruValues {
        wz: (
            store.value(cell.wz.w).clone(),
            store.value(cell.wz.b).clone(),
        ),
        uz: store.value(cell.uz).clone(),
        wr: (
            store.value(cell.wr.w).clone(),
            store.value(cell.wr.b).clone(),
        ),
        ur: store.value(cell.ur).clone(),
        wn: (
            store.value(cell.wn.w).clone(),
            store.value(cell.wn.b).clone(),
        ),
        un: store.value(cell.un).clone(),
    }
}
