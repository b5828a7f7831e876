//! Anchor-grid sampling: compress each (case, modality) token sequence onto
//! a fixed temporal grid with content+time low-rank attention.
//!
//! Each anchor is `(t_i, q_m)` with `t_i` on the grid and `q_m` a learnable
//! modality query. Anchors attend over the whole `(case, modality)`
//! sequence; the output is the plain softmax-weighted sum of `W_V h_j`
//! (no residual, no feed-forward), so sampled tokens stay inside the convex
//! hull of the projected values. A block with no input tokens emits the
//! placeholder `q_m` replicated at every anchor.

use std::ops::Range;
use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::coupling::{self, ActiveDims, Coupling, Dim};
use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::relations::{self, RelationParams};
use crate::tape::{PairTable, Tape, Var};
use crate::tensor::Tensor;

/// Fixed temporal grid `{0, dt, 2dt, ...} <= horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub interval: f64,
    pub horizon: f64,
}

impl AnchorGrid {
    pub fn new(interval: f64, horizon: f64) -> Result<Self> {
        if interval <= 0.0 || horizon < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "anchor grid needs positive interval and horizon, got {interval}, {horizon}"
            )));
        }
        Ok(AnchorGrid { interval, horizon })
    }

    pub fn len(&self) -> usize {
        (self.horizon / self.interval).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn timestamps(&self) -> Vec<f64> {
        (0..self.len()).map(|k| k as f64 * self.interval).collect()
    }
}

/// One modality's sampling slot: its grid and the learnable anchor query,
/// which doubles as the placeholder content for blocks with no input
/// tokens.
#[derive(Debug, Clone)]
pub struct SampleEntry {
    pub modality: usize,
    pub grid: AnchorGrid,
    pub query: ParamId,
}

/// One sampling layer. Coupling is restricted to the content and time
/// dimensions; every instance owns its projections and time encoder. The
/// entries define which modalities the layer emits.
#[derive(Debug, Clone)]
pub struct LrrslLayer {
    pub rel: RelationParams,
    pub coupling: Coupling,
    pub w_v: ParamId,
    pub entries: Vec<SampleEntry>,
    pub width: usize,
    pub heads: usize,
}

impl LrrslLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        rank: usize,
        heads: usize,
        grids: Vec<(usize, AnchorGrid)>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let rel = RelationParams::new(store, name, width, None, false, rng)?;
        let coupling = Coupling::new(
            store,
            &format!("{name}.coupling"),
            ActiveDims::HT,
            rank,
            heads,
            width,
            rng,
        )?;
        let std = 1.0 / (width as f64).sqrt();
        let w_v = store.register(
            format!("{name}.w_v"),
            Tensor::randn(&[width, width], std, rng),
        )?;
        let mut entries = Vec::with_capacity(grids.len());
        for (modality, grid) in grids {
            if entries
                .last()
                .map(|e: &SampleEntry| e.modality >= modality)
                .unwrap_or(false)
            {
                return Err(Error::InvalidArgument(
                    "sampling entries must have ascending modality ids".into(),
                ));
            }
            entries.push(SampleEntry {
                modality,
                grid,
                query: store.register(
                    format!("{name}.q_m{modality}"),
                    Tensor::randn(&[width], std, rng),
                )?,
            });
        }
        Ok(LrrslLayer {
            rel,
            coupling,
            w_v,
            entries,
            width,
            heads,
        })
    }

    pub fn entry_for(&self, modality: usize) -> Option<&SampleEntry> {
        self.entries.iter().find(|e| e.modality == modality)
    }
}

/// Sample a cloud onto the layer's grids: every (case, entry-modality)
/// block is emitted, attended when the input block has tokens and a
/// placeholder tile otherwise. Output rows are laid out case-major, then
/// modality, then anchor, with timestamps bit-equal to the grid.
pub fn lrrsl_forward(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &LrrslLayer,
    cloud: &PointCloud,
) -> Result<PointCloud> {
    let cases = cloud.case_count();
    let m_count = cloud.ranges.first().map(|r| r.len()).unwrap_or(0);
    let heads = layer.heads;

    // Stack anchor queries once; anchors of entry e share row e.
    let mut qrows = Vec::with_capacity(layer.entries.len());
    for e in &layer.entries {
        let qv = tape.param(store, e.query);
        qrows.push(tape.reshape(qv, vec![1, layer.width])?);
    }
    let stacked_q = tape.concat(&qrows, 0)?;
    let wq = tape.param(store, layer.rel.w_q);
    let wk = tape.param(store, layer.rel.w_k);
    let wv = tape.param(store, layer.w_v);
    let qproj = tape.matmul(stacked_q, wq)?;
    let kfeat = tape.matmul(cloud.tokens, wk)?;
    let vfeat = tape.matmul(cloud.tokens, wv)?;

    // Enumerate anchors of non-empty blocks in output order and build the
    // pair lists (every anchor attends over its whole block).
    let mut offsets = vec![0usize];
    let mut cols: Vec<u32> = Vec::new();
    let mut pair_mod: Vec<u32> = Vec::new();
    let mut deltas: Vec<f64> = Vec::new();
    // Per (case, processed modality): rows of the attended output, or None
    // for a placeholder block.
    let mut block_rows: Vec<Option<Range<usize>>> = Vec::new();
    let mut attended = 0usize;
    for c in 0..cases {
        for (ei, e) in layer.entries.iter().enumerate() {
            let slice = cloud.slice(c, e.modality);
            if slice.is_empty() {
                block_rows.push(None);
                continue;
            }
            let start = attended;
            for t_anchor in e.grid.timestamps() {
                for j in slice.clone() {
                    cols.push(j as u32);
                    pair_mod.push(ei as u32);
                    deltas.push(t_anchor - cloud.time[j]);
                }
                offsets.push(cols.len());
                attended += 1;
            }
            block_rows.push(Some(start..attended));
        }
    }

    let attn_out = if attended > 0 {
        let pairs = cols.len();
        let cols = Rc::new(cols);
        let pair_mod = Rc::new(pair_mod);
        let offsets = Rc::new(offsets);
        let (uniq, didx) = {
            let mut uniq = Vec::new();
            let mut map = std::collections::HashMap::new();
            let mut idx = Vec::with_capacity(deltas.len());
            for &dt in &deltas {
                let k = *map.entry(dt.to_bits()).or_insert_with(|| {
                    uniq.push(dt);
                    (uniq.len() - 1) as u32
                });
                idx.push(k);
            }
            (uniq, Rc::new(idx))
        };
        let time_tbl = relations::time_table(tape, store, &layer.rel.phi_t, &uniq)?;
        let mut coupled = Vec::new();
        let mut unary = Vec::new();
        for (di, dim) in layer.coupling.dims.list().iter().enumerate() {
            let qp = layer.coupling.q[di];
            let wp = layer.coupling.w[di];
            match dim {
                Dim::Content => {
                    let pos = coupling::head_dots(tape, store, qproj, qp, heads)?;
                    let neg = coupling::head_dots(tape, store, kfeat, qp, heads)?;
                    coupled.push(PairTable {
                        pos,
                        pos_idx: pair_mod.clone(),
                        neg: Some((neg, cols.clone())),
                    });
                    let upos = coupling::head_unary(tape, store, qproj, wp, heads)?;
                    let uneg = coupling::head_unary(tape, store, kfeat, wp, heads)?;
                    unary.push(PairTable {
                        pos: upos,
                        pos_idx: pair_mod.clone(),
                        neg: Some((uneg, cols.clone())),
                    });
                }
                Dim::Time => {
                    let pos = coupling::head_dots(tape, store, time_tbl, qp, heads)?;
                    coupled.push(PairTable {
                        pos,
                        pos_idx: didx.clone(),
                        neg: None,
                    });
                    let upos = coupling::head_unary(tape, store, time_tbl, wp, heads)?;
                    unary.push(PairTable {
                        pos: upos,
                        pos_idx: didx.clone(),
                        neg: None,
                    });
                }
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "sampling coupling restricted to content+time, found {}",
                        other.tag()
                    )))
                }
            }
        }
        let bias = tape.param(store, layer.coupling.bias);
        let logits = tape.pair_logits(coupled, unary, bias, layer.coupling.rank, heads, pairs)?;
        let alpha = tape.segment_softmax(logits, offsets.clone())?;
        Some(tape.attn_combine(alpha, vfeat, cols, offsets, heads)?)
    } else {
        None
    };

    // Assemble output rows: attended blocks in order, placeholder tiles for
    // empty blocks.
    let mut parts: Vec<Var> = Vec::new();
    let mut time = Vec::new();
    let mut modality = Vec::new();
    let mut case = Vec::new();
    let mut ranges = vec![vec![0..0; m_count]; cases];
    let mut row = 0usize;
    let mut block_iter = block_rows.into_iter();
    for c in 0..cases {
        for e in &layer.entries {
            let rows = block_iter.next().unwrap();
            let g = e.grid.len();
            match rows {
                Some(r) => {
                    let out = attn_out.expect("attended rows exist");
                    parts.push(tape.narrow(out, 0, r.start, r.len())?);
                }
                None => {
                    let qv = tape.param(store, e.query);
                    let qrow = tape.reshape(qv, vec![1, layer.width])?;
                    let tile_idx = Rc::new(vec![0u32; g]);
                    parts.push(tape.gather_rows(qrow, tile_idx)?);
                }
            }
            let start = row;
            for t in e.grid.timestamps() {
                time.push(t);
                modality.push(e.modality);
                case.push(c);
                row += 1;
            }
            ranges[c][e.modality] = start..row;
        }
    }
    let tokens = tape.concat(&parts, 0)?;
    Ok(PointCloud {
        tokens,
        width: layer.width,
        time,
        modality,
        case,
        ranges,
    })
}

/// True iff per-modality sequences are grid-aligned across the cases of
/// both clouds: identical lengths and bit-identical timestamps.
pub fn grid_align_check(a: &PointCloud, b: &PointCloud, modality: usize) -> bool {
    let mut reference: Option<Vec<u64>> = None;
    for cloud in [a, b] {
        for c in 0..cloud.case_count() {
            let r = cloud.slice(c, modality);
            if r.is_empty() {
                continue;
            }
            let ts: Vec<u64> = r.map(|i| cloud.time[i].to_bits()).collect();
            match &reference {
                None => reference = Some(ts),
                Some(prev) => {
                    if *prev != ts {
                        return false;
                    }
                }
            }
        }
    }
    true
}
