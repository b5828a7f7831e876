//! The five-level interaction pipeline: per-level neighborhood rules,
//! modality-specific parameters at levels 1-2, the unifying projection, and
//! orchestration of attention and sampling stages.
//!
//! Level rules over coordinates (self is always a neighbor):
//!   1 local:          same case, same modality, |dt| <= delta, truncated to
//!                     the k_max temporally nearest (ties: self first, then
//!                     lower token index)
//!   2 intra-modality: same case, same modality
//!   3 cross-modality: same case, different modality
//!   4 cross-sample:   different case
//!   5 fusion:         same case
//!
//! Missing-modality blocks enter at the first sampling stage as learnable
//! placeholder anchors, so every later level sees a full (case, modality)
//! grid; the availability mask, not token presence, gates losses and
//! recovery downstream.

use std::ops::Range;
use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::attention::{lrrl_forward, LrrlLayer, LrrlOptions, Neighborhoods};
use crate::coupling::ActiveDims;
use crate::data::{encode, EventBatch, ModalityEncoder, PointCloud};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::ParamStore;
use crate::sampling::{lrrsl_forward, AnchorGrid, LrrslLayer};
use crate::selfsup::{fgr_reconstruct, recovery_update};
use crate::tape::{Tape, Var};

/// Neighborhood predicate per level.
#[derive(Debug, Clone, PartialEq)]
pub enum LevelRule {
    Local { delta: f64, k_max: usize },
    IntraModality,
    CrossModality,
    CrossSample,
    Fusion,
}

/// Parameter scope of a level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamScope {
    PerModality,
    Shared,
}

#[derive(Debug, Clone)]
pub struct LevelSpec {
    pub level: u8,
    pub rule: LevelRule,
    pub dims: ActiveDims,
    pub scope: ParamScope,
}

/// The five levels with their active dimensions and parameter scopes.
pub fn level_specs(delta: f64, k_max: usize) -> [LevelSpec; 5] {
    [
        LevelSpec {
            level: 1,
            rule: LevelRule::Local { delta, k_max },
            dims: ActiveDims::HT,
            scope: ParamScope::PerModality,
        },
        LevelSpec {
            level: 2,
            rule: LevelRule::IntraModality,
            dims: ActiveDims::HT,
            scope: ParamScope::PerModality,
        },
        LevelSpec {
            level: 3,
            rule: LevelRule::CrossModality,
            dims: ActiveDims::HTM,
            scope: ParamScope::Shared,
        },
        LevelSpec {
            level: 4,
            rule: LevelRule::CrossSample,
            dims: ActiveDims::HTMC,
            scope: ParamScope::Shared,
        },
        LevelSpec {
            level: 5,
            rule: LevelRule::Fusion,
            dims: ActiveDims::HTM,
            scope: ParamScope::Shared,
        },
    ]
}

/// Contiguous token span of each case (clouds are laid out case-major).
fn case_spans(cloud: &PointCloud) -> Vec<Range<usize>> {
    let mut spans = vec![0..0; cloud.case_count()];
    let mut i = 0;
    while i < cloud.len() {
        let c = cloud.case[i];
        let start = i;
        while i < cloud.len() && cloud.case[i] == c {
            i += 1;
        }
        spans[c] = start..i;
    }
    spans
}

/// Build per-token neighbor lists for a rule. Lists are ascending by token
/// index and always contain the token itself.
pub fn build_neighborhoods(cloud: &PointCloud, rule: &LevelRule) -> Neighborhoods {
    let n = cloud.len();
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0usize);
    let mut cols: Vec<u32> = Vec::new();
    let spans = match rule {
        LevelRule::CrossSample | LevelRule::Fusion => case_spans(cloud),
        _ => Vec::new(),
    };
    for i in 0..n {
        match rule {
            LevelRule::Local { delta, k_max } => {
                let slice = cloud.slice(cloud.case[i], cloud.modality[i]);
                let mut cand: Vec<usize> = slice
                    .filter(|&j| (cloud.time[i] - cloud.time[j]).abs() <= *delta)
                    .collect();
                // nearest first; self wins ties, then lower index
                cand.sort_by(|&a, &b| {
                    let da = (cloud.time[i] - cloud.time[a]).abs();
                    let db = (cloud.time[i] - cloud.time[b]).abs();
                    (da, a != i, a).partial_cmp(&(db, b != i, b)).unwrap()
                });
                cand.truncate(*k_max);
                cand.sort_unstable();
                cols.extend(cand.iter().map(|&j| j as u32));
            }
            LevelRule::IntraModality => {
                let slice = cloud.slice(cloud.case[i], cloud.modality[i]);
                cols.extend(slice.map(|j| j as u32));
            }
            LevelRule::CrossModality => {
                let mut list: Vec<usize> = Vec::new();
                for (m, r) in cloud.ranges[cloud.case[i]].iter().enumerate() {
                    if m != cloud.modality[i] {
                        list.extend(r.clone());
                    }
                }
                list.push(i);
                list.sort_unstable();
                cols.extend(list.iter().map(|&j| j as u32));
            }
            LevelRule::CrossSample => {
                let span = &spans[cloud.case[i]];
                cols.extend((0..span.start).map(|j| j as u32));
                cols.push(i as u32);
                cols.extend((span.end..n).map(|j| j as u32));
            }
            LevelRule::Fusion => {
                let span = &spans[cloud.case[i]];
                cols.extend(span.clone().map(|j| j as u32));
            }
        }
        offsets.push(cols.len());
    }
    Neighborhoods {
        offsets: Rc::new(offsets),
        cols: Rc::new(cols),
    }
}

/// The cross-sample rule as a named entry point: every token attends to all
/// tokens of other cases, plus itself.
pub fn cross_sample_neighborhood(cloud: &PointCloud) -> Neighborhoods {
    build_neighborhoods(cloud, &LevelRule::CrossSample)
}

/// Model-wide hyperparameters.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub modalities: usize,
    /// Raw content dimension per modality.
    pub feature_dims: Vec<usize>,
    /// Token width per modality at levels 1-2.
    pub modality_widths: Vec<usize>,
    /// Unified width after the level-2 projection.
    pub width: usize,
    pub rank: usize,
    pub heads: usize,
    /// FFN hidden width = multiplier * width.
    pub ffn_multiplier: usize,
    /// Level-1 window in hours and its event cap.
    pub delta: f64,
    pub k_max: usize,
    /// Per-modality sampling intervals for the two sampling stages.
    pub grid1: Vec<f64>,
    pub grid3: Vec<f64>,
    pub horizon: f64,
    pub pre_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            modalities: 2,
            feature_dims: vec![5, 5],
            modality_widths: vec![128, 128],
            width: 128,
            rank: 8,
            heads: 8,
            ffn_multiplier: 4,
            delta: 2.0,
            k_max: 6,
            grid1: vec![1.0, 4.0],
            grid3: vec![4.0, 12.0],
            horizon: 48.0,
            pre_norm: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.modalities;
        if m == 0
            || self.feature_dims.len() != m
            || self.modality_widths.len() != m
            || self.grid1.len() != m
            || self.grid3.len() != m
        {
            return Err(Error::Config(format!(
                "per-modality settings must have length {m}"
            )));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} not divisible by heads {}",
                self.width, self.heads
            )));
        }
        for w in &self.modality_widths {
            if w % self.heads != 0 {
                return Err(Error::Config(format!(
                    "modality width {w} not divisible by heads {}",
                    self.heads
                )));
            }
        }
        Ok(())
    }
}

/// Ordered stack of the five attention levels, the two sampling stages, the
/// per-modality encoders, and the unifying projections.
#[derive(Debug, Clone)]
pub struct HierarchyModel {
    pub cfg: ModelConfig,
    pub encoders: Vec<ModalityEncoder>,
    pub lrrl1: Vec<LrrlLayer>,
    pub lrrsl1: Vec<LrrslLayer>,
    pub lrrl2: Vec<LrrlLayer>,
    pub proj: Vec<Linear>,
    pub lrrl3: LrrlLayer,
    pub lrrsl3: LrrslLayer,
    pub lrrl4: LrrlLayer,
    pub lrrl5: LrrlLayer,
}

impl HierarchyModel {
    pub fn new(store: &mut ParamStore, cfg: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.modalities;
        let mut encoders = Vec::with_capacity(m);
        let mut lrrl1 = Vec::with_capacity(m);
        let mut lrrsl1 = Vec::with_capacity(m);
        let mut lrrl2 = Vec::with_capacity(m);
        let mut proj = Vec::with_capacity(m);
        for mi in 0..m {
            let dm = cfg.modality_widths[mi];
            encoders.push(ModalityEncoder::new(
                store,
                &format!("enc.m{mi}"),
                cfg.feature_dims[mi],
                2 * cfg.feature_dims[mi].max(dm / 2),
                dm,
                rng,
            )?);
            let opts = LrrlOptions {
                modalities: None,
                with_case: false,
                with_rec: false,
                pre_norm: cfg.pre_norm,
                ffn_hidden: cfg.ffn_multiplier * dm,
            };
            lrrl1.push(LrrlLayer::new(
                store,
                &format!("lrrl1.m{mi}"),
                ActiveDims::HT,
                dm,
                cfg.rank,
                cfg.heads,
                &opts,
                rng,
            )?);
            lrrsl1.push(LrrslLayer::new(
                store,
                &format!("lrrsl1.m{mi}"),
                dm,
                cfg.rank,
                cfg.heads,
                vec![(mi, AnchorGrid::new(cfg.grid1[mi], cfg.horizon)?)],
                rng,
            )?);
            lrrl2.push(LrrlLayer::new(
                store,
                &format!("lrrl2.m{mi}"),
                ActiveDims::HT,
                dm,
                cfg.rank,
                cfg.heads,
                &opts,
                rng,
            )?);
            proj.push(Linear::new(
                store,
                &format!("proj.m{mi}"),
                dm,
                cfg.width,
                rng,
            )?);
        }
        let shared_ffn = cfg.ffn_multiplier * cfg.width;
        let lrrl3 = LrrlLayer::new(
            store,
            "lrrl3",
            ActiveDims::HTM,
            cfg.width,
            cfg.rank,
            cfg.heads,
            &LrrlOptions {
                modalities: Some(m),
                with_case: false,
                with_rec: true,
                pre_norm: cfg.pre_norm,
                ffn_hidden: shared_ffn,
            },
            rng,
        )?;
        let grid3: Vec<(usize, AnchorGrid)> = (0..m)
            .map(|mi| Ok((mi, AnchorGrid::new(cfg.grid3[mi], cfg.horizon)?)))
            .collect::<Result<_>>()?;
        let lrrsl3 = LrrslLayer::new(store, "lrrsl3", cfg.width, cfg.rank, cfg.heads, grid3, rng)?;
        let lrrl4 = LrrlLayer::new(
            store,
            "lrrl4",
            ActiveDims::HTMC,
            cfg.width,
            cfg.rank,
            cfg.heads,
            &LrrlOptions {
                modalities: Some(m),
                with_case: true,
                with_rec: true,
                pre_norm: cfg.pre_norm,
                ffn_hidden: shared_ffn,
            },
            rng,
        )?;
        let lrrl5 = LrrlLayer::new(
            store,
            "lrrl5",
            ActiveDims::HTM,
            cfg.width,
            cfg.rank,
            cfg.heads,
            &LrrlOptions {
                modalities: Some(m),
                with_case: false,
                with_rec: false,
                pre_norm: cfg.pre_norm,
                ffn_hidden: shared_ffn,
            },
            rng,
        )?;
        Ok(HierarchyModel {
            cfg,
            encoders,
            lrrl1,
            lrrsl1,
            lrrl2,
            proj,
            lrrl3,
            lrrsl3,
            lrrl4,
            lrrl5,
        })
    }
}

/// Every intermediate the losses and inference need, retained per forward
/// pass.
pub struct LayerOutputs {
    /// Post-projection intra-modality output (unified width, level-1 grid).
    pub h2: PointCloud,
    /// Cross-modality output on the same geometry.
    pub h3: PointCloud,
    /// Level-3 reconstruction rows, aligned with `h3`.
    pub h3_rec: Var,
    /// Post-sampling cloud feeding the cross-sample level (level-3 grid).
    pub h4_in: PointCloud,
    /// Cross-sample output before recovery.
    pub h4: PointCloud,
    /// Level-4 reconstruction rows, aligned with `h4`.
    pub h4_rec: Var,
    /// Aggregated reconstruction (downsampled level-3 plus level-4 rows).
    pub recon: Var,
    /// `h4` with missing blocks replaced by the reconstruction.
    pub h4_updated: PointCloud,
    /// Fusion output.
    pub h5: PointCloud,
}

/// Run the full pipeline:
/// local -> sample -> intra-modality -> project -> cross-modality ->
/// sample -> cross-sample -> recovery -> fusion. The masked recovery update
/// is applied before the fusion level in training and evaluation alike.
pub fn forward(
    tape: &mut Tape,
    store: &ParamStore,
    model: &HierarchyModel,
    batch: &EventBatch,
) -> Result<LayerOutputs> {
    let cfg = &model.cfg;
    let raw = encode(tape, store, &model.encoders, batch)?;
    let specs = level_specs(cfg.delta, cfg.k_max);

    // Levels 1-2 run per modality at that modality's width.
    let mut c2: Vec<PointCloud> = Vec::with_capacity(cfg.modalities);
    for mi in 0..cfg.modalities {
        let n1 = build_neighborhoods(&raw[mi], &specs[0].rule);
        let r1 = lrrl_forward(tape, store, &model.lrrl1[mi], &raw[mi], &n1, None)?;
        let sampled = lrrsl_forward(tape, store, &model.lrrsl1[mi], &r1.cloud)?;
        let n2 = build_neighborhoods(&sampled, &specs[1].rule);
        let r2 = lrrl_forward(tape, store, &model.lrrl2[mi], &sampled, &n2, None)?;
        c2.push(r2.cloud);
    }

    // Unify widths and merge into one case-major cloud.
    let h2 = merge_projected(tape, store, model, &c2)?;

    let n3 = build_neighborhoods(&h2, &specs[2].rule);
    let r3 = lrrl_forward(tape, store, &model.lrrl3, &h2, &n3, None)?;
    let h3 = r3.cloud;
    let h3_rec = r3.rec.expect("level 3 has a reconstruction head");

    let h4_in = lrrsl_forward(tape, store, &model.lrrsl3, &h3)?;
    let n4 = build_neighborhoods(&h4_in, &specs[3].rule);
    let r4 = lrrl_forward(
        tape,
        store,
        &model.lrrl4,
        &h4_in,
        &n4,
        Some(&batch.availability),
    )?;
    let h4 = r4.cloud;
    let h4_rec = r4.rec.expect("level 4 has a reconstruction head");

    let recon = fgr_reconstruct(tape, store, &model.lrrsl3, &h3, h3_rec, h4_rec)?;
    let h4_updated = recovery_update(tape, &h4, recon, &batch.availability)?;

    let n5 = build_neighborhoods(&h4_updated, &specs[4].rule);
    let r5 = lrrl_forward(tape, store, &model.lrrl5, &h4_updated, &n5, None)?;

    Ok(LayerOutputs {
        h2,
        h3,
        h3_rec,
        h4_in,
        h4,
        h4_rec,
        recon,
        h4_updated,
        h5: r5.cloud,
    })
}

/// Project each per-modality cloud to the unified width and interleave blocks
/// into canonical (case, modality, time) order.
fn merge_projected(
    tape: &mut Tape,
    store: &ParamStore,
    model: &HierarchyModel,
    clouds: &[PointCloud],
) -> Result<PointCloud> {
    let cfg = &model.cfg;
    let cases = clouds[0].case_count();
    let mut projected = Vec::with_capacity(cfg.modalities);
    for (mi, cloud) in clouds.iter().enumerate() {
        projected.push(model.proj[mi].apply(tape, store, cloud.tokens)?);
    }
    let mut parts = Vec::new();
    let mut time = Vec::new();
    let mut modality = Vec::new();
    let mut case = Vec::new();
    let mut ranges = vec![vec![0..0; cfg.modalities]; cases];
    let mut row = 0usize;
    for c in 0..cases {
        for (mi, cloud) in clouds.iter().enumerate() {
            let r = cloud.slice(c, mi);
            if r.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "merge: case {c} modality {mi} block is empty"
                )));
            }
            parts.push(tape.narrow(projected[mi], 0, r.start, r.len())?);
            for i in r.clone() {
                time.push(cloud.time[i]);
                modality.push(mi);
                case.push(c);
            }
            ranges[c][mi] = row..row + r.len();
            row += r.len();
        }
    }
    let tokens = tape.concat(&parts, 0)?;
    Ok(PointCloud {
        tokens,
        width: cfg.width,
        time,
        modality,
        case,
        ranges,
    })
}
