//! Low-rank coupling of per-pair relation features into attention logits,
//! plus the explicit full-tensor reference it approximates.
//!
//! The coupled term is a CP decomposition of the implicit interaction
//! tensor: `e = sum_g prod_dims <Q_dim^(g), r_dim> + sum_dims w_dim.r_dim + b`.
//! The full-tensor path materializes `W = sum_g outer(Q_dims...)` and
//! contracts it against `outer(r_dims...)`; it is exponential in the number
//! of active dimensions and exists as an independent equivalence oracle.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// The four relation dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    Content,
    Time,
    Modality,
    Case,
}

impl Dim {
    pub const ALL: [Dim; 4] = [Dim::Content, Dim::Time, Dim::Modality, Dim::Case];

    pub fn tag(&self) -> &'static str {
        match self {
            Dim::Content => "h",
            Dim::Time => "t",
            Dim::Modality => "m",
            Dim::Case => "c",
        }
    }
}

/// Subset of relation dimensions active at a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveDims {
    pub content: bool,
    pub time: bool,
    pub modality: bool,
    pub case: bool,
}

impl ActiveDims {
    pub const HT: ActiveDims = ActiveDims {
        content: true,
        time: true,
        modality: false,
        case: false,
    };
    pub const HTM: ActiveDims = ActiveDims {
        content: true,
        time: true,
        modality: true,
        case: false,
    };
    pub const HTMC: ActiveDims = ActiveDims {
        content: true,
        time: true,
        modality: true,
        case: true,
    };

    pub fn from_dims(dims: &[Dim]) -> Self {
        let mut a = ActiveDims {
            content: false,
            time: false,
            modality: false,
            case: false,
        };
        for d in dims {
            match d {
                Dim::Content => a.content = true,
                Dim::Time => a.time = true,
                Dim::Modality => a.modality = true,
                Dim::Case => a.case = true,
            }
        }
        a
    }

    pub fn has(&self, d: Dim) -> bool {
        match d {
            Dim::Content => self.content,
            Dim::Time => self.time,
            Dim::Modality => self.modality,
            Dim::Case => self.case,
        }
    }

    /// Active dimensions in canonical (h, t, m, c) order.
    pub fn list(&self) -> Vec<Dim> {
        Dim::ALL.iter().copied().filter(|d| self.has(*d)).collect()
    }

    pub fn count(&self) -> usize {
        self.list().len()
    }
}

/// The four per-pair relation vectors, populated exactly on a layer's
/// active dimensions.
#[derive(Debug, Clone, Default)]
pub struct RelationFeatures {
    pub content: Option<Vec<f64>>,
    pub time: Option<Vec<f64>>,
    pub modality: Option<Vec<f64>>,
    pub case: Option<Vec<f64>>,
}

impl RelationFeatures {
    pub fn get(&self, d: Dim) -> Option<&Vec<f64>> {
        match d {
            Dim::Content => self.content.as_ref(),
            Dim::Time => self.time.as_ref(),
            Dim::Modality => self.modality.as_ref(),
            Dim::Case => self.case.as_ref(),
        }
    }

    pub fn set(&mut self, d: Dim, v: Vec<f64>) {
        match d {
            Dim::Content => self.content = Some(v),
            Dim::Time => self.time = Some(v),
            Dim::Modality => self.modality = Some(v),
            Dim::Case => self.case = Some(v),
        }
    }
}

/// Single-head coupling values: per-rank projection vectors, unary weights,
/// and the bias, all plain tensors.
#[derive(Debug, Clone)]
pub struct CouplingValues {
    pub dims: ActiveDims,
    pub rank: usize,
    /// Per active dim (canonical order): `(rank, d)` projection vectors.
    pub q: Vec<Tensor>,
    /// Per active dim: `(d,)` unary weights.
    pub w: Vec<Tensor>,
    pub bias: f64,
}

impl CouplingValues {
    pub fn width(&self) -> usize {
        self.q.first().map(|t| t.shape()[1]).unwrap_or(0)
    }

    fn check(&self, rel: &RelationFeatures) -> Result<()> {
        if self.q.len() != self.dims.count() || self.w.len() != self.dims.count() {
            return Err(Error::InvalidArgument(
                "coupling: parameter count does not match active dimensions".into(),
            ));
        }
        for (i, d) in self.dims.list().iter().enumerate() {
            let r = rel.get(*d).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "relation feature '{}' missing for active dimension",
                    d.tag()
                ))
            })?;
            if r.len() != self.q[i].shape()[1] || r.len() != self.w[i].numel() {
                return Err(Error::ShapeMismatch {
                    op: "couple",
                    lhs: vec![r.len()],
                    rhs: self.q[i].shape().to_vec(),
                });
            }
        }
        for d in Dim::ALL {
            if !self.dims.has(d) && rel.get(d).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "relation feature '{}' populated outside active dimensions",
                    d.tag()
                )));
            }
        }
        Ok(())
    }
}

/// Per-pair logit: coupled rank products plus unary terms plus bias.
pub fn couple(rel: &RelationFeatures, cv: &CouplingValues) -> Result<f64> {
    couple_counted(rel, cv).map(|(e, _)| e)
}

/// As [`couple`], also counting floating-point operations (multiplies and
/// adds) so complexity claims can be measured rather than assumed.
pub fn couple_counted(rel: &RelationFeatures, cv: &CouplingValues) -> Result<(f64, u64)> {
    cv.check(rel)?;
    let dims = cv.dims.list();
    let mut flops = 0u64;
    let mut e = cv.bias;
    for g in 0..cv.rank {
        let mut prod = 1.0;
        for (i, d) in dims.iter().enumerate() {
            let r = rel.get(*d).unwrap();
            let qrow = cv.q[i].row(g);
            let mut dot = 0.0;
            for (a, b) in qrow.iter().zip(r.iter()) {
                dot += a * b;
            }
            flops += 2 * r.len() as u64; // mul + add per coordinate
            prod *= dot;
            flops += 1;
        }
        e += prod;
        flops += 1;
    }
    for (i, d) in dims.iter().enumerate() {
        let r = rel.get(*d).unwrap();
        let mut dot = 0.0;
        for (a, b) in cv.w[i].data().iter().zip(r.iter()) {
            dot += a * b;
        }
        flops += 2 * r.len() as u64;
        e += dot;
        flops += 1;
    }
    Ok((e, flops))
}

/// Oracle limits: the materialized tensor has `d^|D|` entries.
const ORACLE_MAX_WIDTH: usize = 6;

/// Materialize the full interaction tensor `W = sum_g outer(Q_*^(g))`,
/// contract it with `outer(r_*)`, and add unary terms and bias.
pub fn full_tensor_oracle(rel: &RelationFeatures, cv: &CouplingValues) -> Result<f64> {
    full_tensor_oracle_counted(rel, cv).map(|(e, _)| e)
}

pub fn full_tensor_oracle_counted(
    rel: &RelationFeatures,
    cv: &CouplingValues,
) -> Result<(f64, u64)> {
    cv.check(rel)?;
    let dims = cv.dims.list();
    let d = cv.width();
    if d > ORACLE_MAX_WIDTH || dims.is_empty() || dims.len() > 4 {
        return Err(Error::InvalidArgument(format!(
            "full tensor oracle limited to 1..=4 dims of width <= {ORACLE_MAX_WIDTH}"
        )));
    }
    let nd = dims.len();
    let total = d.pow(nd as u32);
    let mut flops = 0u64;
    // Incremental outer product of a list of vectors (row-major over the
    // dimension order), counting one multiply per produced entry.
    fn outer(vecs: Vec<&[f64]>, flops: &mut u64) -> Vec<f64> {
        let mut acc = vec![1.0f64];
        for v in vecs {
            let mut next = Vec::with_capacity(acc.len() * v.len());
            for &a in &acc {
                for &b in v {
                    next.push(a * b);
                    *flops += 1;
                }
            }
            acc = next;
        }
        acc
    }
    // W = sum_g outer(Q_*^(g))
    let mut w_full = vec![0.0f64; total];
    for g in 0..cv.rank {
        let qo = outer((0..nd).map(|k| cv.q[k].row(g)).collect(), &mut flops);
        for (w, q) in w_full.iter_mut().zip(&qo) {
            *w += q;
            flops += 1;
        }
    }
    // contraction with outer(r_*)
    let ro = outer(
        dims.iter().map(|dim| rel.get(*dim).unwrap().as_slice()).collect(),
        &mut flops,
    );
    let mut e = cv.bias;
    for (w, r) in w_full.iter().zip(&ro) {
        e += w * r;
        flops += 2;
    }
    for (i, dim) in dims.iter().enumerate() {
        let r = rel.get(*dim).unwrap();
        for (a, b) in cv.w[i].data().iter().zip(r.iter()) {
            e += a * b;
            flops += 2;
        }
    }
    Ok((e, flops))
}

/// Trainable coupling parameters for one attention instance. Relation
/// vectors are computed at full width and split into `heads` contiguous
/// chunks; projections, unary weights, and the bias are per head.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub dims: ActiveDims,
    pub rank: usize,
    pub heads: usize,
    pub width: usize,
    /// Per active dim (canonical order): `(rank, width)`.
    pub q: Vec<ParamId>,
    /// Per active dim: `(width,)`.
    pub w: Vec<ParamId>,
    /// `(heads,)` bias, one scalar per head.
    pub bias: ParamId,
}

impl Coupling {
    /// Projections start at N(0, 1/sqrt(d)); unary weights and bias at zero
    /// so initial logits sit near zero and softmax starts near uniform.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: ActiveDims,
        rank: usize,
        heads: usize,
        width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if width % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "width {width} not divisible by heads {heads}"
            )));
        }
        let std = 1.0 / (width as f64).sqrt();
        let mut q = Vec::new();
        let mut w = Vec::new();
        for d in dims.list() {
            q.push(store.register(
                format!("{name}.q_{}", d.tag()),
                Tensor::randn(&[rank, width], std, rng),
            )?);
            w.push(store.register(format!("{name}.w_{}", d.tag()), Tensor::zeros(&[width]))?);
        }
        let bias = store.register(format!("{name}.b"), Tensor::zeros(&[heads]))?;
        Ok(Coupling {
            dims,
            rank,
            heads,
            width,
            q,
            w,
            bias,
        })
    }

    /// Extract one head's plain coupling values (for oracle comparisons).
    pub fn head_values(&self, store: &ParamStore, head: usize) -> CouplingValues {
        let dh = self.width / self.heads;
        let mut q = Vec::new();
        let mut w = Vec::new();
        for i in 0..self.q.len() {
            let full = store.value(self.q[i]);
            let mut rows = Vec::with_capacity(self.rank);
            for g in 0..self.rank {
                rows.push(full.row(g)[head * dh..(head + 1) * dh].to_vec());
            }
            q.push(Tensor::from_rows(&rows).unwrap());
            let wf = store.value(self.w[i]);
            w.push(Tensor::new(vec![dh], wf.data()[head * dh..(head + 1) * dh].to_vec()).unwrap());
        }
        CouplingValues {
            dims: self.dims,
            rank: self.rank,
            q,
            w,
            bias: store.value(self.bias).data()[head],
        }
    }
}

/// Per-head per-rank dot products of feature rows with projection vectors:
/// `(N, d) x (rank, d)` -> `(N, heads*rank)`, column layout `h*rank + g`.
pub fn head_dots(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    q: ParamId,
    heads: usize,
) -> Result<Var> {
    let qv = tape.param(store, q);
    tape.head_dots(x, qv, heads)
}

/// Per-head unary dots: `(N, d)` with `(d,)` -> `(N, heads)`.
pub fn head_unary(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    w: ParamId,
    heads: usize,
) -> Result<Var> {
    let wv = tape.param(store, w);
    let width = tape.value(wv).numel();
    let wrow = tape.reshape(wv, vec![1, width])?;
    tape.head_dots(x, wrow, heads)
}
