//! Clinical events, availability masks, batching, and the point cloud
//! representation.
//!
//! Dataset files are newline-delimited UTF-8 records:
//! `{"case_id": int, "modality": int, "timestamp": float, "features": [float...],
//!   "label": 0|1 (optional), "label_observed": 0|1}`.
//! Label fields are written on a case's first record only; repeats must
//! agree or ingestion fails.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp2;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// One raw observation: content vector, hours since admission, modality id,
/// and owning case.
#[derive(Debug, Clone, PartialEq)]
pub struct ClinicalEvent {
    pub content: Vec<f64>,
    pub timestamp: f64,
    pub modality: usize,
    pub case_id: u64,
}

/// All events of one case plus its label availability.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub case_id: u64,
    /// Sorted by (modality, timestamp).
    pub events: Vec<ClinicalEvent>,
    pub label: u8,
    pub label_observed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DuplicatePolicy {
    KeepLast,
    Error,
}

#[derive(Debug, Clone)]
pub struct DataConfig {
    pub modalities: usize,
    pub horizon: f64,
    pub on_duplicate: DuplicatePolicy,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            modalities: 2,
            horizon: 48.0,
            on_duplicate: DuplicatePolicy::KeepLast,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FileRecord {
    case_id: u64,
    modality: usize,
    timestamp: f64,
    features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_observed: Option<u8>,
}

/// A full split, ready to be cut into mini-batches.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub cases: Vec<CaseRecord>,
    pub modalities: usize,
    pub horizon: f64,
}

impl Dataset {
    /// Sequential chunks in case order; the final batch may be smaller.
    pub fn batches(&self, batch_size: usize) -> Result<Vec<EventBatch>> {
        self.cases
            .chunks(batch_size.max(1))
            .map(|chunk| EventBatch::from_cases(chunk, self.modalities, self.horizon))
            .collect()
    }

    pub fn full_batch(&self) -> Result<EventBatch> {
        EventBatch::from_cases(&self.cases, self.modalities, self.horizon)
    }
}

/// A mini-batch: events grouped per (case, modality), the availability
/// matrix, and the label mask. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EventBatch {
    pub m_count: usize,
    pub case_ids: Vec<u64>,
    /// `[case][modality]` -> time-sorted events.
    pub events: Vec<Vec<Vec<ClinicalEvent>>>,
    /// `availability[c][m] == true` iff at least one event of modality `m`
    /// exists for case `c`.
    pub availability: Vec<Vec<bool>>,
    pub label_mask: Vec<bool>,
    /// Meaningful only where `label_mask` is set.
    pub labels: Vec<u8>,
}

impl EventBatch {
    pub fn from_cases(cases: &[CaseRecord], m_count: usize, horizon: f64) -> Result<Self> {
        let mut events = Vec::with_capacity(cases.len());
        let mut availability = Vec::with_capacity(cases.len());
        let mut label_mask = Vec::with_capacity(cases.len());
        let mut labels = Vec::with_capacity(cases.len());
        let mut case_ids = Vec::with_capacity(cases.len());
        for case in cases {
            if case.events.is_empty() {
                return Err(Error::InvalidCase {
                    case: case.case_id,
                    msg: "case has no events".into(),
                });
            }
            let mut per_mod: Vec<Vec<ClinicalEvent>> = vec![Vec::new(); m_count];
            for e in &case.events {
                if e.modality >= m_count {
                    return Err(Error::OutOfRange {
                        what: "modality",
                        value: e.modality.to_string(),
                        limit: m_count.to_string(),
                    });
                }
                if e.timestamp < 0.0 || e.timestamp > horizon {
                    return Err(Error::OutOfRange {
                        what: "timestamp",
                        value: e.timestamp.to_string(),
                        limit: format!("[0, {horizon}]"),
                    });
                }
                per_mod[e.modality].push(e.clone());
            }
            for seq in &mut per_mod {
                seq.sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).unwrap());
            }
            let mu: Vec<bool> = per_mod.iter().map(|s| !s.is_empty()).collect();
            availability.push(mu);
            events.push(per_mod);
            label_mask.push(case.label_observed);
            labels.push(case.label);
            case_ids.push(case.case_id);
        }
        Ok(EventBatch {
            m_count,
            case_ids,
            events,
            availability,
            label_mask,
            labels,
        })
    }

    pub fn case_count(&self) -> usize {
        self.case_ids.len()
    }

    /// True iff every modality is observed for the case (the paper's mu^all).
    pub fn all_observed(&self, case: usize) -> bool {
        self.availability[case].iter().all(|&m| m)
    }
}

/// Read a dataset file, deriving masks and sorting events. Malformed lines
/// are reported with their line number.
pub fn ingest(path: &Path, cfg: &DataConfig) -> Result<Dataset> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    // case_id -> (insertion order, label info, events keyed for dedup)
    let mut order: Vec<u64> = Vec::new();
    struct PendingCase {
        label: Option<(bool, u8)>,
        events: Vec<ClinicalEvent>,
        seen: HashMap<(usize, u64), usize>,
    }
    let mut pending: HashMap<u64, PendingCase> = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FileRecord = serde_json::from_str(&line).map_err(|e| Error::Ingest {
            line: lineno,
            msg: e.to_string(),
        })?;
        if rec.modality >= cfg.modalities {
            return Err(Error::Ingest {
                line: lineno,
                msg: format!(
                    "unknown modality id {} (dataset has {})",
                    rec.modality, cfg.modalities
                ),
            });
        }
        if rec.timestamp < 0.0 || rec.timestamp > cfg.horizon || !rec.timestamp.is_finite() {
            return Err(Error::Ingest {
                line: lineno,
                msg: format!(
                    "timestamp {} outside [0, {}]",
                    rec.timestamp, cfg.horizon
                ),
            });
        }
        let entry = pending.entry(rec.case_id).or_insert_with(|| {
            order.push(rec.case_id);
            PendingCase {
                label: None,
                events: Vec::new(),
                seen: HashMap::new(),
            }
        });
        if let Some(lo) = rec.label_observed {
            let observed = match lo {
                0 => false,
                1 => true,
                other => {
                    return Err(Error::Ingest {
                        line: lineno,
                        msg: format!("label_observed must be 0/1, got {other}"),
                    })
                }
            };
            let label = if observed {
                match rec.label {
                    Some(v @ (0 | 1)) => v,
                    Some(other) => {
                        return Err(Error::Ingest {
                            line: lineno,
                            msg: format!("label must be 0/1, got {other}"),
                        })
                    }
                    None => {
                        return Err(Error::Ingest {
                            line: lineno,
                            msg: "label_observed=1 but label missing".into(),
                        })
                    }
                }
            } else {
                0
            };
            match entry.label {
                None => entry.label = Some((observed, label)),
                Some(prev) if prev == (observed, label) => {}
                Some(_) => {
                    return Err(Error::Ingest {
                        line: lineno,
                        msg: format!("case {} label fields disagree", rec.case_id),
                    })
                }
            }
        }
        let ev = ClinicalEvent {
            content: rec.features,
            timestamp: rec.timestamp,
            modality: rec.modality,
            case_id: rec.case_id,
        };
        let key = (rec.modality, rec.timestamp.to_bits());
        match entry.seen.get(&key) {
            Some(&i) => match cfg.on_duplicate {
                DuplicatePolicy::KeepLast => entry.events[i] = ev,
                DuplicatePolicy::Error => {
                    return Err(Error::Ingest {
                        line: lineno,
                        msg: format!(
                            "duplicate (case {}, modality {}, t={})",
                            rec.case_id, rec.modality, rec.timestamp
                        ),
                    })
                }
            },
            None => {
                entry.seen.insert(key, entry.events.len());
                entry.events.push(ev);
            }
        }
    }
    let mut cases = Vec::with_capacity(order.len());
    for case_id in order {
        let mut pc = pending.remove(&case_id).unwrap();
        let (label_observed, label) = pc.label.ok_or_else(|| Error::InvalidCase {
            case: case_id,
            msg: "no record carried label_observed".into(),
        })?;
        pc.events.sort_by(|a, b| {
            (a.modality, a.timestamp.to_bits())
                .cmp(&(b.modality, b.timestamp.to_bits()))
        });
        cases.push(CaseRecord {
            case_id,
            events: pc.events,
            label,
            label_observed,
        });
    }
    cases.sort_by_key(|c| c.case_id);
    Ok(Dataset {
        cases,
        modalities: cfg.modalities,
        horizon: cfg.horizon,
    })
}

/// Write cases in the dataset file format; label fields go on each case's
/// first record only. Byte-stable for identical inputs.
pub fn write_dataset(path: &Path, cases: &[CaseRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for case in cases {
        for (i, e) in case.events.iter().enumerate() {
            let rec = FileRecord {
                case_id: case.case_id,
                modality: e.modality,
                timestamp: e.timestamp,
                features: e.content.clone(),
                label: if i == 0 && case.label_observed {
                    Some(case.label)
                } else {
                    None
                },
                label_observed: if i == 0 {
                    Some(case.label_observed as u8)
                } else {
                    None
                },
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Tokens aligned with coordinates. `ranges[case][modality]` locates each
/// (case, modality) slice as a contiguous, time-ordered row range; slices
/// over all pairs partition the rows.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub tokens: Var,
    pub width: usize,
    pub time: Vec<f64>,
    pub modality: Vec<usize>,
    /// Batch-local case index per token.
    pub case: Vec<usize>,
    pub ranges: Vec<Vec<Range<usize>>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Time-ordered token positions of a (case, modality) slice; empty when
    /// the modality is unobserved at this stage.
    pub fn slice(&self, case: usize, modality: usize) -> Range<usize> {
        self.ranges[case][modality].clone()
    }

    pub fn case_count(&self) -> usize {
        self.ranges.len()
    }

    /// Structural invariants: ranges form a disjoint cover in row order and
    /// coordinate arrays agree with them; timestamps are non-decreasing
    /// within each slice.
    pub fn validate(&self) -> Result<()> {
        let mut covered = 0usize;
        for (c, mods) in self.ranges.iter().enumerate() {
            for (m, r) in mods.iter().enumerate() {
                if r.start != covered && !r.is_empty() {
                    return Err(Error::InvalidArgument(format!(
                        "cloud ranges not contiguous at case {c} modality {m}"
                    )));
                }
                for i in r.clone() {
                    if self.case[i] != c || self.modality[i] != m {
                        return Err(Error::InvalidArgument(format!(
                            "coordinate mismatch at token {i}"
                        )));
                    }
                    if i > r.start && self.time[i] < self.time[i - 1] {
                        return Err(Error::InvalidArgument(format!(
                            "timestamps decrease inside slice at token {i}"
                        )));
                    }
                }
                covered += r.len();
            }
        }
        if covered != self.len() {
            return Err(Error::InvalidArgument(format!(
                "ranges cover {covered} of {} tokens",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Per-modality two-layer perceptron mapping raw content to the modality's
/// token width.
#[derive(Debug, Clone)]
pub struct ModalityEncoder {
    pub mlp: Mlp2,
    pub raw_dim: usize,
    pub out_dim: usize,
}

impl ModalityEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        raw_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Self> {
        Ok(ModalityEncoder {
            mlp: Mlp2::new(store, name, raw_dim, hidden, out_dim, rng)?,
            raw_dim,
            out_dim,
        })
    }
}

/// Embed every event as one token, per modality; coordinates carry over
/// unchanged. Returns one cloud per modality (token widths may differ),
/// each laid out case-major and time-sorted.
pub fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    encoders: &[ModalityEncoder],
    batch: &EventBatch,
) -> Result<Vec<PointCloud>> {
    if encoders.len() != batch.m_count {
        return Err(Error::InvalidArgument(format!(
            "{} encoders for {} modalities",
            encoders.len(),
            batch.m_count
        )));
    }
    let mut clouds = Vec::with_capacity(batch.m_count);
    for (m, enc) in encoders.iter().enumerate() {
        let mut raw = Vec::new();
        let mut time = Vec::new();
        let mut case = Vec::new();
        let mut ranges: Vec<Vec<Range<usize>>> =
            vec![vec![0..0; batch.m_count]; batch.case_count()];
        for c in 0..batch.case_count() {
            let start = time.len();
            for e in &batch.events[c][m] {
                if e.content.len() != enc.raw_dim {
                    return Err(Error::ShapeMismatch {
                        op: "encode",
                        lhs: vec![e.content.len()],
                        rhs: vec![enc.raw_dim],
                    });
                }
                raw.extend_from_slice(&e.content);
                time.push(e.timestamp);
                case.push(c);
            }
            ranges[c][m] = start..time.len();
        }
        let n = time.len();
        let tokens = if n == 0 {
            tape.input(Tensor::zeros(&[0, enc.out_dim]))
        } else {
            let x = tape.input(Tensor::new(vec![n, enc.raw_dim], raw)?);
            enc.mlp.apply(tape, store, x)?
        };
        clouds.push(PointCloud {
            tokens,
            width: enc.out_dim,
            modality: vec![m; n],
            time,
            case,
            ranges,
        });
    }
    Ok(clouds)
}
