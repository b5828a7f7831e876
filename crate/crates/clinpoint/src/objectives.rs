//! Multi-level supervision and entropy-based branch selection.
//!
//! Three supervised terms over labeled cases: the global loss on fusion
//! output, the cross-modal loss gated by full modality availability, and
//! the per-modality regularizer on intra-modality means. Each family is
//! normalized by its count of contributing terms by default (a config
//! switch restores raw sums). At inference every computable branch emits a
//! class distribution and the lowest-entropy one wins, ties going to the
//! global branch.

use rand_chacha::ChaCha8Rng;

use crate::data::{EventBatch, PointCloud};
use crate::error::{Error, Result};
use crate::hierarchy::LayerOutputs;
use crate::nn::Linear;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Shared fusion classifier (used by both the cross-modal and global
/// branches) plus one head per modality.
#[derive(Debug, Clone)]
pub struct Heads {
    pub f_phi: Linear,
    pub f_m: Vec<Linear>,
    pub width: usize,
    pub modalities: usize,
}

impl Heads {
    pub fn new(
        store: &mut ParamStore,
        modalities: usize,
        width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let f_phi = Linear::new(store, "heads.f_phi", modalities * width, 2, rng)?;
        let mut f_m = Vec::with_capacity(modalities);
        for m in 0..modalities {
            f_m.push(Linear::new(store, &format!("heads.f_m{m}"), width, 2, rng)?);
        }
        Ok(Heads {
            f_phi,
            f_m,
            width,
            modalities,
        })
    }
}

/// Concatenate the per-modality last-anchor tokens of one case, in fixed
/// modality order: `(1, M*d)`. Missing modalities contribute whatever token
/// occupies their last anchor (placeholder or recovered content).
pub fn fuse_case(tape: &mut Tape, cloud: &PointCloud, case: usize) -> Result<Var> {
    let mods = cloud.ranges[case].len();
    let mut parts = Vec::with_capacity(mods);
    for m in 0..mods {
        let r = cloud.slice(case, m);
        if r.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "fuse_case: case {case} modality {m} has no tokens at this layer"
            )));
        }
        parts.push(tape.narrow(cloud.tokens, 0, r.end - 1, 1)?);
    }
    tape.concat(&parts, 1)
}

/// Mean token of one (case, modality) block: `(1, d)`.
pub fn block_mean(tape: &mut Tape, cloud: &PointCloud, case: usize, modality: usize) -> Result<Var> {
    let r = cloud.slice(case, modality);
    if r.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "block_mean: case {case} modality {modality} empty"
        )));
    }
    let block = tape.narrow(cloud.tokens, 0, r.start, r.len())?;
    let mean = tape.mean_axis(block, 0)?;
    let d = cloud.width;
    tape.reshape(mean, vec![1, d])
}

/// Cross-entropy of stacked 2-class logits against the given labels,
/// summed; `normalize` divides by the row count.
fn ce_loss(tape: &mut Tape, logits: Var, labels: &[u8], normalize: bool) -> Result<Var> {
    let k = labels.len();
    debug_assert_eq!(tape.value(logits).shape(), &[k, 2]);
    let mask = Tensor::full(&[k, 2], 1.0);
    let probs = tape.softmax(logits, &mask)?;
    let logp = tape.log(probs)?;
    let mut onehot = vec![0.0; k * 2];
    for (i, &y) in labels.iter().enumerate() {
        onehot[i * 2 + y as usize] = 1.0;
    }
    let oh = tape.input(Tensor::new(vec![k, 2], onehot)?);
    let picked = tape.mul(logp, oh)?;
    let total = tape.sum_all(picked);
    let scale = if normalize { -1.0 / k as f64 } else { -1.0 };
    Ok(tape.scale(total, scale))
}

pub struct SupervisedLosses {
    pub global: Var,
    pub cross_modal: Var,
    pub unimodal: Var,
}

/// The three supervised terms. Families with no contributing cases come
/// back as exact zero scalars.
pub fn supervised_losses(
    tape: &mut Tape,
    store: &ParamStore,
    outputs: &LayerOutputs,
    batch: &EventBatch,
    heads: &Heads,
    normalize: bool,
) -> Result<SupervisedLosses> {
    // Global: every labeled case, on the fusion output.
    let mut g_rows = Vec::new();
    let mut g_labels = Vec::new();
    for c in 0..batch.case_count() {
        if batch.label_mask[c] {
            g_rows.push(fuse_case(tape, &outputs.h5, c)?);
            g_labels.push(batch.labels[c]);
        }
    }
    let global = if g_rows.is_empty() {
        tape.scalar(0.0)
    } else {
        let stacked = tape.concat(&g_rows, 0)?;
        let logits = heads.f_phi.apply(tape, store, stacked)?;
        ce_loss(tape, logits, &g_labels, normalize)?
    };

    // Cross-modal: labeled cases with every modality observed, on the
    // cross-modality output.
    let mut f_rows = Vec::new();
    let mut f_labels = Vec::new();
    for c in 0..batch.case_count() {
        if batch.label_mask[c] && batch.all_observed(c) {
            f_rows.push(fuse_case(tape, &outputs.h3, c)?);
            f_labels.push(batch.labels[c]);
        }
    }
    let cross_modal = if f_rows.is_empty() {
        tape.scalar(0.0)
    } else {
        let stacked = tape.concat(&f_rows, 0)?;
        let logits = heads.f_phi.apply(tape, store, stacked)?;
        ce_loss(tape, logits, &f_labels, normalize)?
    };

    // Per-modality: labeled (case, modality) blocks with the modality
    // observed, each through its own head on the intra-modality mean.
    let mut per_mod_terms: Vec<Var> = Vec::new();
    let mut contributing = 0usize;
    for m in 0..heads.modalities {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..batch.case_count() {
            if batch.label_mask[c] && batch.availability[c][m] {
                rows.push(block_mean(tape, &outputs.h2, c, m)?);
                labels.push(batch.labels[c]);
            }
        }
        if rows.is_empty() {
            continue;
        }
        contributing += labels.len();
        let stacked = tape.concat(&rows, 0)?;
        let logits = heads.f_m[m].apply(tape, store, stacked)?;
        per_mod_terms.push(ce_loss(tape, logits, &labels, false)?);
    }
    let unimodal = if per_mod_terms.is_empty() {
        tape.scalar(0.0)
    } else {
        let mut acc = per_mod_terms[0];
        for t in &per_mod_terms[1..] {
            acc = tape.add(acc, *t)?;
        }
        if normalize {
            tape.scale(acc, 1.0 / contributing as f64)
        } else {
            acc
        }
    };

    Ok(SupervisedLosses {
        global,
        cross_modal,
        unimodal,
    })
}

/// `(L_g + L_f + L_s) + lambda_a * L_a + lambda_r * L_r`.
pub fn total_loss(
    tape: &mut Tape,
    sup: &SupervisedLosses,
    align: Var,
    recon: Var,
    lambda_a: f64,
    lambda_r: f64,
) -> Result<Var> {
    let mut acc = tape.add(sup.global, sup.cross_modal)?;
    acc = tape.add(acc, sup.unimodal)?;
    let a = tape.scale(align, lambda_a);
    acc = tape.add(acc, a)?;
    let r = tape.scale(recon, lambda_r);
    tape.add(acc, r)
}

/// Which prediction branch produced a case's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Global,
    CrossModal,
    Unimodal(usize),
}

impl Branch {
    pub fn tag(&self) -> String {
        match self {
            Branch::Global => "global".into(),
            Branch::CrossModal => "cross_modal".into(),
            Branch::Unimodal(m) => format!("unimodal_{m}"),
        }
    }
}

fn softmax2(logits: &[f64]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

fn entropy(p: &[f64; 2]) -> f64 {
    let mut h = 0.0;
    for &v in p {
        if v > 0.0 {
            h -= v * v.ln();
        }
    }
    h
}

/// One case's candidate distributions: the global branch, the cross-modal
/// branch, and one branch per observed modality, in that fixed order.
pub fn branch_distributions(
    tape: &mut Tape,
    store: &ParamStore,
    outputs: &LayerOutputs,
    batch: &EventBatch,
    heads: &Heads,
    case: usize,
) -> Result<Vec<(Branch, [f64; 2])>> {
    let mut out = Vec::new();
    let u5 = fuse_case(tape, &outputs.h5, case)?;
    let g = heads.f_phi.apply(tape, store, u5)?;
    out.push((Branch::Global, softmax2(tape.value(g).row(0))));
    let u3 = fuse_case(tape, &outputs.h3, case)?;
    let f = heads.f_phi.apply(tape, store, u3)?;
    out.push((Branch::CrossModal, softmax2(tape.value(f).row(0))));
    for m in 0..heads.modalities {
        if batch.availability[case][m] {
            let mean = block_mean(tape, &outputs.h2, case, m)?;
            let l = heads.f_m[m].apply(tape, store, mean)?;
            out.push((Branch::Unimodal(m), softmax2(tape.value(l).row(0))));
        }
    }
    Ok(out)
}

/// Lowest-entropy branch selection. Candidates are evaluated in the fixed
/// order global, cross-modal, unimodal by modality id; a later candidate
/// replaces the current pick only when strictly lower, so ties resolve
/// toward the global branch.
pub fn entropy_inference(
    tape: &mut Tape,
    store: &ParamStore,
    outputs: &LayerOutputs,
    batch: &EventBatch,
    heads: &Heads,
    case: usize,
) -> Result<(f64, Branch)> {
    let candidates = branch_distributions(tape, store, outputs, batch, heads, case)?;
    let mut best = &candidates[0];
    let mut best_h = entropy(&best.1);
    for cand in &candidates[1..] {
        let h = entropy(&cand.1);
        if h < best_h {
            best_h = h;
            best = cand;
        }
    }
    Ok((best.1[1], best.0))
}

/// Always-global prediction, for the ablation switch.
pub fn global_inference(
    tape: &mut Tape,
    store: &ParamStore,
    outputs: &LayerOutputs,
    heads: &Heads,
    case: usize,
) -> Result<f64> {
    let u5 = fuse_case(tape, &outputs.h5, case)?;
    let g = heads.f_phi.apply(tape, store, u5)?;
    Ok(softmax2(tape.value(g).row(0))[1])
}
