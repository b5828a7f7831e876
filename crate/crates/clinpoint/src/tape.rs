//! Reverse-mode differentiation over a computation tape.
//!
//! Every primitive records its output eagerly together with whatever the
//! adjoint needs. `backward` walks the record once in reverse; that is a
//! reverse topological order because outputs are always fresh nodes.
//!
//! Broadcasting for binary elementwise ops is limited to three cases:
//! equal shapes, scalar right-hand side, and a right-hand side equal to the
//! trailing axes of the left-hand side. Anything richer is rejected.

use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{broadcast_kind, Broadcast, Tensor};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy)]
enum UnKind {
    Exp,
    Log,
    Sqrt,
    Tanh,
    Sigmoid,
    Relu,
}

/// One dimension's lookup tables inside [`Op::PairLogits`]: the factor for
/// pair `p` is `pos[pos_idx[p]] - neg[neg_idx[p]]` (or just the positive
/// part when `neg` is absent).
#[derive(Debug, Clone)]
pub struct PairTable {
    pub pos: Var,
    pub pos_idx: Rc<Vec<u32>>,
    pub neg: Option<(Var, Rc<Vec<u32>>)>,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    MatMul {
        a: Var,
        b: Var,
    },
    Bin {
        kind: BinKind,
        a: Var,
        b: Var,
        bcast: Broadcast,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Shift {
        x: Var,
    },
    Un {
        kind: UnKind,
        x: Var,
    },
    Gelu {
        x: Var,
    },
    HeadDots {
        x: Var,
        q: Var,
        heads: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Transpose {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    SumAll {
        x: Var,
    },
    MeanAll {
        x: Var,
    },
    SumAxis {
        x: Var,
        axis: usize,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Softmax {
        x: Var,
        mask: Rc<Tensor>,
    },
    SegmentSoftmax {
        x: Var,
        offsets: Rc<Vec<usize>>,
    },
    GatherRows {
        x: Var,
        idx: Rc<Vec<u32>>,
    },
    AttnCombine {
        alpha: Var,
        v: Var,
        cols: Rc<Vec<u32>>,
        offsets: Rc<Vec<usize>>,
        heads: usize,
    },
    SegmentMeanRows {
        x: Var,
        offsets: Rc<Vec<usize>>,
    },
    LayerNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    PairLogits {
        coupled: Vec<PairTable>,
        unary: Vec<PairTable>,
        bias: Var,
        rank: usize,
    },
}

struct Rec {
    op: Op,
    out: usize,
}

/// Ordered record of primitive operations sufficient to replay adjoints.
pub struct Tape {
    vals: Vec<Tensor>,
    recs: Vec<Rec>,
    grads: Option<Vec<Vec<f64>>>,
    leased: HashMap<ParamId, Var>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            vals: Vec::new(),
            recs: Vec::new(),
            grads: None,
            leased: HashMap::new(),
        }
    }

    fn push(&mut self, op: Op, out: Tensor) -> Var {
        let id = self.vals.len();
        self.vals.push(out);
        self.recs.push(Rec { op, out: id });
        Var(id)
    }

    /// A leaf node holding constant data.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.input(Tensor::scalar(v))
    }

    /// Lease a parameter onto this tape. Repeated leases of the same
    /// parameter return the same node, so shared parameters accumulate
    /// gradients from every use site.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.leased.get(&id) {
            return *v;
        }
        let v = self.input(store.value(id).clone());
        self.leased.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.0]
    }

    /// Gradient of the most recent `backward` call w.r.t. a leaf node.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.as_ref().map(|g| g[v.0].as_slice())
    }

    pub fn node_count(&self) -> usize {
        self.vals.len()
    }

    // ───────────────────────── primitives ─────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.vals[a.0].shape(), self.vals[b.0].shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        {
            let da = self.vals[a.0].data();
            let db = self.vals[b.0].data();
            for i in 0..m {
                let arow = &da[i * k..(i + 1) * k];
                let orow = &mut out[i * n..(i + 1) * n];
                for (kk, &av) in arow.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &db[kk * n..(kk + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        Ok(self.push(Op::MatMul { a, b }, Tensor::new(vec![m, n], out)?))
    }

    fn bin(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.vals[a.0].shape(), self.vals[b.0].shape());
        let bcast = broadcast_kind(sa, sb).ok_or_else(|| Error::ShapeMismatch {
            op: match kind {
                BinKind::Add => "add",
                BinKind::Sub => "sub",
                BinKind::Mul => "mul",
                BinKind::Div => "div",
            },
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        let da = self.vals[a.0].data();
        let db = self.vals[b.0].data();
        let bn = db.len();
        let mut out = vec![0.0; da.len()];
        macro_rules! apply {
            ($op:tt) => {
                match bcast {
                    Broadcast::Same => {
                        for i in 0..da.len() {
                            out[i] = da[i] $op db[i];
                        }
                    }
                    Broadcast::Scalar => {
                        let bv = db[0];
                        for i in 0..da.len() {
                            out[i] = da[i] $op bv;
                        }
                    }
                    Broadcast::Trailing => {
                        for i in 0..da.len() {
                            out[i] = da[i] $op db[i % bn];
                        }
                    }
                }
            };
        }
        match kind {
            BinKind::Add => apply!(+),
            BinKind::Sub => apply!(-),
            BinKind::Mul => apply!(*),
            BinKind::Div => apply!(/),
        }
        let shape = sa.to_vec();
        Ok(self.push(Op::Bin { kind, a, b, bcast }, Tensor::new(shape, out)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(BinKind::Div, a, b)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.vals[x.0].data().iter().map(|v| c * v).collect();
        let shape = self.vals[x.0].shape().to_vec();
        self.push(Op::Scale { x, c }, Tensor::new(shape, out).unwrap())
    }

    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.vals[x.0].data().iter().map(|v| c + v).collect();
        let shape = self.vals[x.0].shape().to_vec();
        self.push(Op::Shift { x }, Tensor::new(shape, out).unwrap())
    }

    fn un(&mut self, kind: UnKind, x: Var) -> Result<Var> {
        let data = self.vals[x.0].data();
        let out: Vec<f64> = match kind {
            UnKind::Exp => data.iter().map(|v| v.exp()).collect(),
            UnKind::Log => {
                if let Some(v) = data.iter().find(|v| **v <= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "log of non-positive value {v}"
                    )));
                }
                data.iter().map(|v| v.ln()).collect()
            }
            UnKind::Sqrt => {
                if let Some(v) = data.iter().find(|v| **v < 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "sqrt of negative value {v}"
                    )));
                }
                data.iter().map(|v| v.sqrt()).collect()
            }
            UnKind::Tanh => data.iter().map(|v| v.tanh()).collect(),
            UnKind::Sigmoid => data.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
            UnKind::Relu => data.iter().map(|v| v.max(0.0)).collect(),
        };
        let shape = self.vals[x.0].shape().to_vec();
        Ok(self.push(Op::Un { kind, x }, Tensor::new(shape, out)?))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.un(UnKind::Exp, x).unwrap()
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.un(UnKind::Log, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.un(UnKind::Sqrt, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.un(UnKind::Tanh, x).unwrap()
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.un(UnKind::Sigmoid, x).unwrap()
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.un(UnKind::Relu, x).unwrap()
    }

    /// Fused smooth gate:
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, x: Var) -> Var {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        let out: Vec<f64> = self.vals[x.0]
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (C * (v + 0.044715 * v * v * v)).tanh()))
            .collect();
        let shape = self.vals[x.0].shape().to_vec();
        self.push(Op::Gelu { x }, Tensor::new(shape, out).unwrap())
    }

    /// Fused per-head rank dots: `(N, d)` with `(R, d)` -> `(N, heads*R)`
    /// where `out[n, h*R+g] = sum_k x[n, h*dh+k] * q[g, h*dh+k]`.
    pub fn head_dots(&mut self, x: Var, q: Var, heads: usize) -> Result<Var> {
        let sx = self.vals[x.0].shape().to_vec();
        let sq = self.vals[q.0].shape().to_vec();
        if sx.len() != 2 || sq.len() != 2 || sx[1] != sq[1] || sx[1] % heads != 0 {
            return Err(Error::ShapeMismatch {
                op: "head_dots",
                lhs: sx,
                rhs: sq,
            });
        }
        let (n, d) = (sx[0], sx[1]);
        let rank = sq[0];
        let dh = d / heads;
        let xd = self.vals[x.0].data();
        let qd = self.vals[q.0].data();
        let mut out = vec![0.0; n * heads * rank];
        for i in 0..n {
            let xrow = &xd[i * d..(i + 1) * d];
            let orow = &mut out[i * heads * rank..(i + 1) * heads * rank];
            for h in 0..heads {
                let xh = &xrow[h * dh..(h + 1) * dh];
                for g in 0..rank {
                    let qh = &qd[g * d + h * dh..g * d + (h + 1) * dh];
                    let mut acc = 0.0;
                    for k in 0..dh {
                        acc += xh[k] * qh[k];
                    }
                    orow[h * rank + g] = acc;
                }
            }
        }
        Ok(self.push(
            Op::HeadDots { x, q, heads },
            Tensor::new(vec![n, heads * rank], out)?,
        ))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("concat of empty list".into()));
        }
        let first = self.vals[xs[0].0].shape().to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidArgument(format!(
                "concat axis {axis} out of rank {}",
                first.len()
            )));
        }
        let mut axis_total = 0;
        for v in xs {
            let s = self.vals[v.0].shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * axis_total * inner];
        let mut pos = 0;
        for v in xs {
            let t = &self.vals[v.0];
            let a = t.shape()[axis];
            let src = t.data();
            for o in 0..outer {
                let dst_base = (o * axis_total + pos) * inner;
                let src_base = o * a * inner;
                out[dst_base..dst_base + a * inner]
                    .copy_from_slice(&src[src_base..src_base + a * inner]);
            }
            pos += a;
        }
        Ok(self.push(
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            Tensor::new(shape, out)?,
        ))
    }

    /// Slice `len` entries along `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.vals[x.0].shape().to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::InvalidArgument(format!(
                "narrow axis {axis} range {start}..{} out of shape {:?}",
                start + len,
                s
            )));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.vals[x.0].data();
        let mut out = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src_base = (o * s[axis] + start) * inner;
            let dst_base = o * len * inner;
            out[dst_base..dst_base + len * inner]
                .copy_from_slice(&src[src_base..src_base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        Ok(self.push(Op::Narrow { x, axis, start }, Tensor::new(shape, out)?))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.vals[x.0].shape();
        if s.len() != 2 {
            return Err(Error::InvalidShape {
                op: "transpose",
                shape: s.to_vec(),
                detail: "expected rank 2".into(),
            });
        }
        let (r, c) = (s[0], s[1]);
        let src = self.vals[x.0].data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(Op::Transpose { x }, Tensor::new(vec![c, r], out)?))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.vals[x.0].clone().reshaped(shape)?;
        Ok(self.push(Op::Reshape { x }, t))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.vals[x.0].data().iter().sum();
        self.push(Op::SumAll { x }, Tensor::scalar(s))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.vals[x.0].numel() as f64;
        let s: f64 = self.vals[x.0].data().iter().sum();
        self.push(Op::MeanAll { x }, Tensor::scalar(s / n))
    }

    fn axis_reduce(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let s = self.vals[x.0].shape().to_vec();
        if s.len() != 2 || axis > 1 {
            return Err(Error::InvalidShape {
                op: "axis reduce",
                shape: s,
                detail: "expected rank 2, axis 0 or 1".into(),
            });
        }
        let (r, c) = (s[0], s[1]);
        let src = self.vals[x.0].data();
        let (out, shape) = if axis == 0 {
            let mut o = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    o[j] += src[i * c + j];
                }
            }
            (o, vec![c])
        } else {
            let mut o = vec![0.0; r];
            for i in 0..r {
                let mut acc = 0.0;
                for j in 0..c {
                    acc += src[i * c + j];
                }
                o[i] = acc;
            }
            (o, vec![r])
        };
        let denom = if mean {
            if axis == 0 {
                r as f64
            } else {
                c as f64
            }
        } else {
            1.0
        };
        let out: Vec<f64> = out.into_iter().map(|v| v / denom).collect();
        let op = if mean {
            Op::MeanAxis { x, axis }
        } else {
            Op::SumAxis { x, axis }
        };
        Ok(self.push(op, Tensor::new(shape, out)?))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.axis_reduce(x, axis, false)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.axis_reduce(x, axis, true)
    }

    /// Masked softmax over the last axis. Masked entries come out exactly 0;
    /// each row is stabilized by its unmasked maximum. A fully masked row is
    /// an error.
    pub fn softmax(&mut self, x: Var, mask: &Tensor) -> Result<Var> {
        let s = self.vals[x.0].shape().to_vec();
        if mask.shape() != s.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                lhs: s,
                rhs: mask.shape().to_vec(),
            });
        }
        if s.is_empty() {
            return Err(Error::InvalidShape {
                op: "softmax",
                shape: s,
                detail: "expected rank >= 1".into(),
            });
        }
        let n = *s.last().unwrap();
        let rows = self.vals[x.0].numel() / n;
        let src = self.vals[x.0].data();
        let md = mask.data();
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let base = r * n;
            let mut mx = f64::NEG_INFINITY;
            for j in 0..n {
                if md[base + j] != 0.0 {
                    mx = mx.max(src[base + j]);
                }
            }
            if mx == f64::NEG_INFINITY {
                return Err(Error::FullyMaskedRow { row: r });
            }
            let mut z = 0.0;
            for j in 0..n {
                if md[base + j] != 0.0 {
                    let e = (src[base + j] - mx).exp();
                    out[base + j] = e;
                    z += e;
                }
            }
            for j in 0..n {
                out[base + j] /= z;
            }
        }
        let mask = Rc::new(mask.clone());
        Ok(self.push(Op::Softmax { x, mask }, Tensor::new(s, out)?))
    }

    /// Column-wise softmax within row segments of a `(P, H)` matrix.
    /// Segment `s` spans rows `offsets[s]..offsets[s+1]`; empty segments are
    /// an error (callers guarantee nonempty neighborhoods).
    pub fn segment_softmax(&mut self, x: Var, offsets: Rc<Vec<usize>>) -> Result<Var> {
        let s = self.vals[x.0].shape().to_vec();
        if s.len() != 2 {
            return Err(Error::InvalidShape {
                op: "segment_softmax",
                shape: s,
                detail: "expected rank 2".into(),
            });
        }
        let h = s[1];
        let src = self.vals[x.0].data();
        let mut out = vec![0.0; src.len()];
        for seg in 0..offsets.len() - 1 {
            let (lo, hi) = (offsets[seg], offsets[seg + 1]);
            if lo == hi {
                return Err(Error::EmptyNeighborhood { token: seg });
            }
            for col in 0..h {
                let mut mx = f64::NEG_INFINITY;
                for p in lo..hi {
                    mx = mx.max(src[p * h + col]);
                }
                let mut z = 0.0;
                for p in lo..hi {
                    let e = (src[p * h + col] - mx).exp();
                    out[p * h + col] = e;
                    z += e;
                }
                for p in lo..hi {
                    out[p * h + col] /= z;
                }
            }
        }
        Ok(self.push(Op::SegmentSoftmax { x, offsets }, Tensor::new(s, out)?))
    }

    /// Gather rows of a 2-D tensor.
    pub fn gather_rows(&mut self, x: Var, idx: Rc<Vec<u32>>) -> Result<Var> {
        let s = self.vals[x.0].shape().to_vec();
        if s.len() != 2 {
            return Err(Error::InvalidShape {
                op: "gather_rows",
                shape: s,
                detail: "expected rank 2".into(),
            });
        }
        let (n, d) = (s[0], s[1]);
        let src = self.vals[x.0].data();
        let mut out = vec![0.0; idx.len() * d];
        for (p, &i) in idx.iter().enumerate() {
            let i = i as usize;
            debug_assert!(i < n);
            out[p * d..(p + 1) * d].copy_from_slice(&src[i * d..(i + 1) * d]);
        }
        let shape = vec![idx.len(), d];
        Ok(self.push(Op::GatherRows { x, idx }, Tensor::new(shape, out)?))
    }

    /// Attention aggregation: for query `q` (rows `offsets[q]..offsets[q+1]`
    /// of the pair list), head `h`, output columns `h*dh..(h+1)*dh` receive
    /// `sum_p alpha[p,h] * v[cols[p], h*dh..]`.
    pub fn attn_combine(
        &mut self,
        alpha: Var,
        v: Var,
        cols: Rc<Vec<u32>>,
        offsets: Rc<Vec<usize>>,
        heads: usize,
    ) -> Result<Var> {
        let sa = self.vals[alpha.0].shape().to_vec();
        let sv = self.vals[v.0].shape().to_vec();
        if sa.len() != 2 || sv.len() != 2 || sa[1] != heads || sv[1] % heads != 0 {
            return Err(Error::ShapeMismatch {
                op: "attn_combine",
                lhs: sa,
                rhs: sv,
            });
        }
        if sa[0] != cols.len() || *offsets.last().unwrap_or(&0) != cols.len() {
            return Err(Error::InvalidArgument(
                "attn_combine: pair list and offsets disagree".into(),
            ));
        }
        let d = sv[1];
        let dh = d / heads;
        let q = offsets.len() - 1;
        let ad = self.vals[alpha.0].data();
        let vd = self.vals[v.0].data();
        let mut out = vec![0.0; q * d];
        for qi in 0..q {
            let orow = &mut out[qi * d..(qi + 1) * d];
            for p in offsets[qi]..offsets[qi + 1] {
                let j = cols[p] as usize;
                let vrow = &vd[j * d..(j + 1) * d];
                for h in 0..heads {
                    let a = ad[p * heads + h];
                    if a == 0.0 {
                        continue;
                    }
                    for k in 0..dh {
                        orow[h * dh + k] += a * vrow[h * dh + k];
                    }
                }
            }
        }
        Ok(self.push(
            Op::AttnCombine {
                alpha,
                v,
                cols,
                offsets,
                heads,
            },
            Tensor::new(vec![q, d], out)?,
        ))
    }

    /// Mean of row segments; an empty segment yields a zero row.
    pub fn segment_mean_rows(&mut self, x: Var, offsets: Rc<Vec<usize>>) -> Result<Var> {
        let s = self.vals[x.0].shape().to_vec();
        if s.len() != 2 {
            return Err(Error::InvalidShape {
                op: "segment_mean_rows",
                shape: s,
                detail: "expected rank 2".into(),
            });
        }
        let d = s[1];
        let segs = offsets.len() - 1;
        let src = self.vals[x.0].data();
        let mut out = vec![0.0; segs * d];
        for seg in 0..segs {
            let (lo, hi) = (offsets[seg], offsets[seg + 1]);
            if lo == hi {
                continue;
            }
            let inv = 1.0 / (hi - lo) as f64;
            for p in lo..hi {
                for k in 0..d {
                    out[seg * d + k] += src[p * d + k] * inv;
                }
            }
        }
        Ok(self.push(
            Op::SegmentMeanRows { x, offsets },
            Tensor::new(vec![segs, d], out)?,
        ))
    }

    /// Row-wise normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let s = self.vals[x.0].shape().to_vec();
        if s.len() != 2 {
            return Err(Error::InvalidShape {
                op: "layer_norm",
                shape: s,
                detail: "expected rank 2".into(),
            });
        }
        let (n, d) = (s[0], s[1]);
        let src = self.vals[x.0].data();
        let mut out = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[i] = istd;
            for k in 0..d {
                out[i * d + k] = (row[k] - mean) * istd;
            }
        }
        Ok(self.push(Op::LayerNorm { x, inv_std }, Tensor::new(s, out)?))
    }

    /// Fused low-rank pair logits. For pair `p` and head `h`:
    ///
    /// `e[p,h] = sum_g prod_dims F_d[p, h*R+g] + sum_dims U_d[p,h] + bias[h]`
    ///
    /// where each factor/unary value is looked up from per-dimension tables
    /// via [`PairTable`]. Coupled tables have `heads*rank` columns, unary
    /// tables `heads` columns, and `bias` has `heads` entries.
    pub fn pair_logits(
        &mut self,
        coupled: Vec<PairTable>,
        unary: Vec<PairTable>,
        bias: Var,
        rank: usize,
        heads: usize,
        pairs: usize,
    ) -> Result<Var> {
        if coupled.is_empty() || coupled.len() != unary.len() {
            return Err(Error::InvalidArgument(
                "pair_logits: need matching coupled/unary tables for every active dimension"
                    .into(),
            ));
        }
        for t in &coupled {
            let s = self.vals[t.pos.0].shape();
            if s.len() != 2 || s[1] != heads * rank || t.pos_idx.len() != pairs {
                return Err(Error::InvalidArgument(format!(
                    "pair_logits: coupled table shape {s:?} or index length mismatch"
                )));
            }
            if let Some((nv, ni)) = &t.neg {
                let ns = self.vals[nv.0].shape();
                if ns.len() != 2 || ns[1] != heads * rank || ni.len() != pairs {
                    return Err(Error::InvalidArgument(
                        "pair_logits: negative coupled table mismatch".into(),
                    ));
                }
            }
        }
        for t in &unary {
            let s = self.vals[t.pos.0].shape();
            if s.len() != 2 || s[1] != heads || t.pos_idx.len() != pairs {
                return Err(Error::InvalidArgument(format!(
                    "pair_logits: unary table shape {s:?} or index length mismatch"
                )));
            }
        }
        if self.vals[bias.0].numel() != heads {
            return Err(Error::InvalidArgument(
                "pair_logits: bias length must equal heads".into(),
            ));
        }
        let ndim = coupled.len();
        let hr = heads * rank;
        let bias_d: Vec<f64> = self.vals[bias.0].data().to_vec();
        let mut out = vec![0.0; pairs * heads];
        {
            // Hoist table storage out of the per-pair loops.
            let ctabs: Vec<(&[f64], &[u32], Option<(&[f64], &[u32])>)> = coupled
                .iter()
                .map(|t| {
                    (
                        self.vals[t.pos.0].data(),
                        t.pos_idx.as_slice(),
                        t.neg
                            .as_ref()
                            .map(|(nv, ni)| (self.vals[nv.0].data(), ni.as_slice())),
                    )
                })
                .collect();
            let utabs: Vec<(&[f64], &[u32], Option<(&[f64], &[u32])>)> = unary
                .iter()
                .map(|t| {
                    (
                        self.vals[t.pos.0].data(),
                        t.pos_idx.as_slice(),
                        t.neg
                            .as_ref()
                            .map(|(nv, ni)| (self.vals[nv.0].data(), ni.as_slice())),
                    )
                })
                .collect();
            let mut rows: Vec<(&[f64], Option<&[f64]>)> = Vec::with_capacity(ndim);
            for p in 0..pairs {
                // Per-pair factor rows, resolved once.
                rows.clear();
                for (pos, pidx, neg) in &ctabs {
                    let base = pidx[p] as usize * hr;
                    rows.push((
                        &pos[base..base + hr],
                        neg.map(|(nt, nidx)| {
                            let nb = nidx[p] as usize * hr;
                            &nt[nb..nb + hr]
                        }),
                    ));
                }
                let orow = &mut out[p * heads..(p + 1) * heads];
                for (h, o) in orow.iter_mut().enumerate() {
                    let mut e = bias_d[h];
                    for g in 0..rank {
                        let col = h * rank + g;
                        let mut prod = 1.0;
                        for (prow, nrow) in &rows {
                            prod *= match nrow {
                                Some(nrow) => prow[col] - nrow[col],
                                None => prow[col],
                            };
                        }
                        e += prod;
                    }
                    *o = e;
                }
                for (pos, pidx, neg) in &utabs {
                    let prow = &pos[pidx[p] as usize * heads..pidx[p] as usize * heads + heads];
                    match neg {
                        Some((nt, nidx)) => {
                            let nrow =
                                &nt[nidx[p] as usize * heads..nidx[p] as usize * heads + heads];
                            for (h, o) in orow.iter_mut().enumerate() {
                                *o += prow[h] - nrow[h];
                            }
                        }
                        None => {
                            for (h, o) in orow.iter_mut().enumerate() {
                                *o += prow[h];
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Op::PairLogits {
                coupled,
                unary,
                bias,
                rank,
            },
            Tensor::new(vec![pairs, heads], out)?,
        ))
    }

    // ───────────────────────── backward ─────────────────────────

    /// Reverse pass from a scalar loss. Gradients of leaf nodes accumulate
    /// (`+=`), so a parameter leased once but used many times collects the
    /// sum of its adjoints; unreachable leaves keep zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = &self.vals[loss.0];
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss {
                op: "backward",
                shape: lt.shape().to_vec(),
            });
        }
        let mut grads: Vec<Vec<f64>> = self.vals.iter().map(|t| vec![0.0; t.numel()]).collect();
        grads[loss.0][0] = 1.0;
        for ri in (0..self.recs.len()).rev() {
            // Out-gradients are complete once we reach the producing record,
            // so the buffer can be taken rather than cloned.
            let out = self.recs[ri].out;
            let go = std::mem::take(&mut grads[out]);
            if go.iter().all(|&g| g == 0.0) && !matches!(self.recs[ri].op, Op::Input) {
                continue;
            }
            let op = self.recs[ri].op.clone();
            self.adjoint(&op, out, &go, &mut grads);
            if matches!(op, Op::Input) {
                grads[out] = go;
            }
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn adjoint(&self, op: &Op, out: usize, go: &[f64], grads: &mut [Vec<f64>]) {
        match op {
            Op::Input => {}
            Op::MatMul { a, b } => {
                let sa = self.vals[a.0].shape();
                let (m, k) = (sa[0], sa[1]);
                let n = self.vals[b.0].shape()[1];
                let ad = self.vals[a.0].data();
                let bd = self.vals[b.0].data();
                {
                    // dA[i, kk] = <go[i, :], B[kk, :]>
                    let ga = &mut grads[a.0];
                    for i in 0..m {
                        let grow = &go[i * n..(i + 1) * n];
                        let garow = &mut ga[i * k..(i + 1) * k];
                        for (kk, gav) in garow.iter_mut().enumerate() {
                            let brow = &bd[kk * n..(kk + 1) * n];
                            let mut acc = 0.0;
                            for (&g, &bv) in grow.iter().zip(brow) {
                                acc += g * bv;
                            }
                            *gav += acc;
                        }
                    }
                }
                {
                    // dB[kk, :] += A[i, kk] * go[i, :]
                    let gb = &mut grads[b.0];
                    for i in 0..m {
                        let arow = &ad[i * k..(i + 1) * k];
                        let grow = &go[i * n..(i + 1) * n];
                        for (kk, &av) in arow.iter().enumerate() {
                            if av == 0.0 {
                                continue;
                            }
                            let gbrow = &mut gb[kk * n..(kk + 1) * n];
                            for (gbv, &g) in gbrow.iter_mut().zip(grow) {
                                *gbv += av * g;
                            }
                        }
                    }
                }
            }
            Op::Bin { kind, a, b, bcast } => {
                let ad = self.vals[a.0].data();
                let bd = self.vals[b.0].data();
                let bn = bd.len();
                let bval = |i: usize| match bcast {
                    Broadcast::Same => bd[i],
                    Broadcast::Scalar => bd[0],
                    Broadcast::Trailing => bd[i % bn],
                };
                let bidx = |i: usize| match bcast {
                    Broadcast::Same => i,
                    Broadcast::Scalar => 0,
                    Broadcast::Trailing => i % bn,
                };
                match kind {
                    BinKind::Add => {
                        for (i, &g) in go.iter().enumerate() {
                            grads[a.0][i] += g;
                        }
                        for (i, &g) in go.iter().enumerate() {
                            grads[b.0][bidx(i)] += g;
                        }
                    }
                    BinKind::Sub => {
                        for (i, &g) in go.iter().enumerate() {
                            grads[a.0][i] += g;
                        }
                        for (i, &g) in go.iter().enumerate() {
                            grads[b.0][bidx(i)] -= g;
                        }
                    }
                    BinKind::Mul => {
                        for (i, &g) in go.iter().enumerate() {
                            grads[a.0][i] += g * bval(i);
                        }
                        for (i, &g) in go.iter().enumerate() {
                            grads[b.0][bidx(i)] += g * ad[i];
                        }
                    }
                    BinKind::Div => {
                        for (i, &g) in go.iter().enumerate() {
                            grads[a.0][i] += g / bval(i);
                        }
                        for (i, &g) in go.iter().enumerate() {
                            let bv = bval(i);
                            grads[b.0][bidx(i)] -= g * ad[i] / (bv * bv);
                        }
                    }
                }
            }
            Op::Scale { x, c } => {
                for (i, &g) in go.iter().enumerate() {
                    grads[x.0][i] += c * g;
                }
            }
            Op::Shift { x } => {
                for (i, &g) in go.iter().enumerate() {
                    grads[x.0][i] += g;
                }
            }
            Op::Un { kind, x } => {
                let xd = self.vals[x.0].data();
                let yd = self.vals[out].data();
                let gx = &mut grads[x.0];
                match kind {
                    UnKind::Exp => {
                        for i in 0..go.len() {
                            gx[i] += go[i] * yd[i];
                        }
                    }
                    UnKind::Log => {
                        for i in 0..go.len() {
                            gx[i] += go[i] / xd[i];
                        }
                    }
                    UnKind::Sqrt => {
                        for i in 0..go.len() {
                            gx[i] += go[i] / (2.0 * yd[i]);
                        }
                    }
                    UnKind::Tanh => {
                        for i in 0..go.len() {
                            gx[i] += go[i] * (1.0 - yd[i] * yd[i]);
                        }
                    }
                    UnKind::Sigmoid => {
                        for i in 0..go.len() {
                            gx[i] += go[i] * yd[i] * (1.0 - yd[i]);
                        }
                    }
                    UnKind::Relu => {
                        for i in 0..go.len() {
                            if xd[i] > 0.0 {
                                gx[i] += go[i];
                            }
                        }
                    }
                }
            }
            Op::Gelu { x } => {
                const C: f64 = 0.797_884_560_802_865_4;
                let xd = self.vals[x.0].data();
                let gx = &mut grads[x.0];
                for i in 0..go.len() {
                    let v = xd[i];
                    let u = C * (v + 0.044715 * v * v * v);
                    let t = u.tanh();
                    let du = C * (1.0 + 3.0 * 0.044715 * v * v);
                    let d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
                    gx[i] += go[i] * d;
                }
            }
            Op::HeadDots { x, q, heads } => {
                let d = self.vals[x.0].shape()[1];
                let n = self.vals[x.0].shape()[0];
                let rank = self.vals[q.0].shape()[0];
                let dh = d / heads;
                let xd = self.vals[x.0].data();
                let qd = self.vals[q.0].data();
                {
                    let gx = &mut grads[x.0];
                    for i in 0..n {
                        let grow = &go[i * heads * rank..(i + 1) * heads * rank];
                        let gxr = &mut gx[i * d..(i + 1) * d];
                        for h in 0..*heads {
                            for g in 0..rank {
                                let gv = grow[h * rank + g];
                                if gv == 0.0 {
                                    continue;
                                }
                                let qh = &qd[g * d + h * dh..g * d + (h + 1) * dh];
                                for k in 0..dh {
                                    gxr[h * dh + k] += gv * qh[k];
                                }
                            }
                        }
                    }
                }
                {
                    let gq = &mut grads[q.0];
                    for i in 0..n {
                        let grow = &go[i * heads * rank..(i + 1) * heads * rank];
                        let xrow = &xd[i * d..(i + 1) * d];
                        for h in 0..*heads {
                            for g in 0..rank {
                                let gv = grow[h * rank + g];
                                if gv == 0.0 {
                                    continue;
                                }
                                let gqr = &mut gq[g * d + h * dh..g * d + (h + 1) * dh];
                                for k in 0..dh {
                                    gqr[k] += gv * xrow[h * dh + k];
                                }
                            }
                        }
                    }
                }
            }
            Op::PairLogits {
                coupled,
                unary,
                bias,
                rank,
            } => {
                let heads = self.vals[out].shape()[1];
                let pairs = self.vals[out].shape()[0];
                let hr = heads * rank;
                let ndim = coupled.len();
                // Every table references a distinct node in practice; take
                // their gradient buffers so the hot loops write directly.
                // Duplicate vars would make `take` drop gradients, so check.
                let mut var_ids: Vec<usize> = Vec::new();
                for t in coupled.iter().chain(unary.iter()) {
                    var_ids.push(t.pos.0);
                    if let Some((nv, _)) = &t.neg {
                        var_ids.push(nv.0);
                    }
                }
                var_ids.push(bias.0);
                let mut sorted = var_ids.clone();
                sorted.sort_unstable();
                sorted.dedup();
                assert_eq!(
                    sorted.len(),
                    var_ids.len(),
                    "pair_logits tables must reference distinct nodes"
                );
                let ctabs: Vec<(&[f64], &[u32], Option<(&[f64], &[u32])>)> = coupled
                    .iter()
                    .map(|t| {
                        (
                            self.vals[t.pos.0].data(),
                            t.pos_idx.as_slice(),
                            t.neg
                                .as_ref()
                                .map(|(nv, ni)| (self.vals[nv.0].data(), ni.as_slice())),
                        )
                    })
                    .collect();
                let mut gpos: Vec<Vec<f64>> = coupled
                    .iter()
                    .map(|t| std::mem::take(&mut grads[t.pos.0]))
                    .collect();
                let mut gneg: Vec<Vec<f64>> = coupled
                    .iter()
                    .map(|t| match &t.neg {
                        Some((nv, _)) => std::mem::take(&mut grads[nv.0]),
                        None => Vec::new(),
                    })
                    .collect();
                let mut gbias = std::mem::take(&mut grads[bias.0]);
                // Stage per-pair factors and gradient coefficients in flat
                // buffers, then write each dimension's row with one
                // contiguous slice update.
                let mut fac = vec![0.0f64; ndim * hr];
                let mut coef = vec![0.0f64; ndim * hr];
                let mut bases = [(0usize, None::<usize>); 4];
                for p in 0..pairs {
                    let grow = &go[p * heads..(p + 1) * heads];
                    if grow.iter().all(|&g| g == 0.0) {
                        continue;
                    }
                    for (slot, (_, pidx, neg)) in bases.iter_mut().zip(&ctabs) {
                        *slot = (
                            pidx[p] as usize * hr,
                            neg.map(|(_, nidx)| nidx[p] as usize * hr),
                        );
                    }
                    for (d, ((pos, _, neg), (pb, nb))) in
                        ctabs.iter().zip(&bases).enumerate()
                    {
                        let dst = &mut fac[d * hr..(d + 1) * hr];
                        match (neg, nb) {
                            (Some((nt, _)), Some(nb)) => {
                                let prow = &pos[*pb..pb + hr];
                                let nrow = &nt[*nb..nb + hr];
                                for c in 0..hr {
                                    dst[c] = prow[c] - nrow[c];
                                }
                            }
                            _ => dst.copy_from_slice(&pos[*pb..pb + hr]),
                        }
                    }
                    for (h, &ge) in grow.iter().enumerate() {
                        gbias[h] += ge;
                        for g in 0..*rank {
                            let col = h * rank + g;
                            // suffix products, then prefix sweep
                            let mut suffix = [1.0f64; 5];
                            for d in (0..ndim).rev() {
                                suffix[d] = suffix[d + 1] * fac[d * hr + col];
                            }
                            let mut prefix = ge;
                            for d in 0..ndim {
                                coef[d * hr + col] = prefix * suffix[d + 1];
                                prefix *= fac[d * hr + col];
                            }
                        }
                    }
                    for (d, (pb, nb)) in bases.iter().enumerate().take(ndim) {
                        let crow = &coef[d * hr..(d + 1) * hr];
                        {
                            let dst = &mut gpos[d][*pb..pb + hr];
                            for (o, &cv) in dst.iter_mut().zip(crow) {
                                *o += cv;
                            }
                        }
                        if let Some(nb) = nb {
                            let dst = &mut gneg[d][*nb..nb + hr];
                            for (o, &cv) in dst.iter_mut().zip(crow) {
                                *o -= cv;
                            }
                        }
                    }
                }
                for (d, t) in coupled.iter().enumerate() {
                    grads[t.pos.0] = std::mem::take(&mut gpos[d]);
                    if let Some((nv, _)) = &t.neg {
                        grads[nv.0] = std::mem::take(&mut gneg[d]);
                    }
                }
                grads[bias.0] = gbias;
                for t in unary {
                    let pidx = t.pos_idx.as_slice();
                    {
                        let gp = &mut grads[t.pos.0];
                        for p in 0..pairs {
                            let base = pidx[p] as usize * heads;
                            for h in 0..heads {
                                gp[base + h] += go[p * heads + h];
                            }
                        }
                    }
                    if let Some((nv, nidx)) = &t.neg {
                        let gn = &mut grads[nv.0];
                        for p in 0..pairs {
                            let base = nidx[p] as usize * heads;
                            for h in 0..heads {
                                gn[base + h] -= go[p * heads + h];
                            }
                        }
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let out_shape = self.vals[out].shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total = out_shape[*axis];
                let mut pos = 0;
                for v in xs {
                    let a = self.vals[v.0].shape()[*axis];
                    let gx = &mut grads[v.0];
                    for o in 0..outer {
                        let src_base = (o * total + pos) * inner;
                        let dst_base = o * a * inner;
                        for t in 0..a * inner {
                            gx[dst_base + t] += go[src_base + t];
                        }
                    }
                    pos += a;
                }
            }
            Op::Narrow { x, axis, start } => {
                let in_shape = self.vals[x.0].shape();
                let out_shape = self.vals[out].shape();
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[*axis + 1..].iter().product();
                let len = out_shape[*axis];
                let gx = &mut grads[x.0];
                for o in 0..outer {
                    let dst_base = (o * in_shape[*axis] + start) * inner;
                    let src_base = o * len * inner;
                    for t in 0..len * inner {
                        gx[dst_base + t] += go[src_base + t];
                    }
                }
            }
            Op::Transpose { x } => {
                let s = self.vals[x.0].shape();
                let (r, c) = (s[0], s[1]);
                let gx = &mut grads[x.0];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += go[j * r + i];
                    }
                }
            }
            Op::Reshape { x } => {
                let gx = &mut grads[x.0];
                for i in 0..go.len() {
                    gx[i] += go[i];
                }
            }
            Op::SumAll { x } => {
                let g = go[0];
                for v in grads[x.0].iter_mut() {
                    *v += g;
                }
            }
            Op::MeanAll { x } => {
                let g = go[0] / self.vals[x.0].numel() as f64;
                for v in grads[x.0].iter_mut() {
                    *v += g;
                }
            }
            Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
                let s = self.vals[x.0].shape();
                let (r, c) = (s[0], s[1]);
                let denom = if matches!(op, Op::MeanAxis { .. }) {
                    if *axis == 0 {
                        r as f64
                    } else {
                        c as f64
                    }
                } else {
                    1.0
                };
                let gx = &mut grads[x.0];
                if *axis == 0 {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += go[j] / denom;
                        }
                    }
                } else {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += go[i] / denom;
                        }
                    }
                }
            }
            Op::Softmax { x, mask } => {
                let y = self.vals[out].data();
                let md = mask.data();
                let n = *self.vals[out].shape().last().unwrap();
                let rows = y.len() / n;
                let gx = &mut grads[x.0];
                for r in 0..rows {
                    let base = r * n;
                    let mut dot = 0.0;
                    for j in 0..n {
                        dot += go[base + j] * y[base + j];
                    }
                    for j in 0..n {
                        if md[base + j] != 0.0 {
                            gx[base + j] += y[base + j] * (go[base + j] - dot);
                        }
                    }
                }
            }
            Op::SegmentSoftmax { x, offsets } => {
                let y = self.vals[out].data();
                let h = self.vals[out].shape()[1];
                let gx = &mut grads[x.0];
                for seg in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[seg], offsets[seg + 1]);
                    for col in 0..h {
                        let mut dot = 0.0;
                        for p in lo..hi {
                            dot += go[p * h + col] * y[p * h + col];
                        }
                        for p in lo..hi {
                            gx[p * h + col] += y[p * h + col] * (go[p * h + col] - dot);
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let d = self.vals[out].shape()[1];
                let gx = &mut grads[x.0];
                for (p, &i) in idx.iter().enumerate() {
                    let i = i as usize;
                    for k in 0..d {
                        gx[i * d + k] += go[p * d + k];
                    }
                }
            }
            Op::AttnCombine {
                alpha,
                v,
                cols,
                offsets,
                heads,
            } => {
                let d = self.vals[v.0].shape()[1];
                let dh = d / heads;
                let vd = self.vals[v.0].data();
                let ad = self.vals[alpha.0].data();
                {
                    let ga = &mut grads[alpha.0];
                    for qi in 0..offsets.len() - 1 {
                        let grow = &go[qi * d..(qi + 1) * d];
                        for p in offsets[qi]..offsets[qi + 1] {
                            let j = cols[p] as usize;
                            let vrow = &vd[j * d..(j + 1) * d];
                            for h in 0..*heads {
                                let mut acc = 0.0;
                                for k in 0..dh {
                                    acc += vrow[h * dh + k] * grow[h * dh + k];
                                }
                                ga[p * heads + h] += acc;
                            }
                        }
                    }
                }
                {
                    let gv = &mut grads[v.0];
                    for qi in 0..offsets.len() - 1 {
                        let grow = &go[qi * d..(qi + 1) * d];
                        for p in offsets[qi]..offsets[qi + 1] {
                            let j = cols[p] as usize;
                            for h in 0..*heads {
                                let a = ad[p * heads + h];
                                if a == 0.0 {
                                    continue;
                                }
                                for k in 0..dh {
                                    gv[j * d + h * dh + k] += a * grow[h * dh + k];
                                }
                            }
                        }
                    }
                }
            }
            Op::SegmentMeanRows { x, offsets } => {
                let d = self.vals[x.0].shape()[1];
                let gx = &mut grads[x.0];
                for seg in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[seg], offsets[seg + 1]);
                    if lo == hi {
                        continue;
                    }
                    let inv = 1.0 / (hi - lo) as f64;
                    for p in lo..hi {
                        for k in 0..d {
                            gx[p * d + k] += go[seg * d + k] * inv;
                        }
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let y = self.vals[out].data();
                let s = self.vals[out].shape();
                let (n, d) = (s[0], s[1]);
                let gx = &mut grads[x.0];
                for i in 0..n {
                    let base = i * d;
                    let mut gm = 0.0;
                    let mut gym = 0.0;
                    for k in 0..d {
                        gm += go[base + k];
                        gym += go[base + k] * y[base + k];
                    }
                    gm /= d as f64;
                    gym /= d as f64;
                    for k in 0..d {
                        gx[base + k] += (go[base + k] - gm - y[base + k] * gym) * inv_std[i];
                    }
                }
            }
        }
    }

    /// Add this tape's parameter gradients into the store, in parameter-id
    /// order, after `backward`.
    pub fn accumulate_grads(&self, store: &mut ParamStore) {
        let grads = match &self.grads {
            Some(g) => g,
            None => return,
        };
        let mut ids: Vec<(ParamId, Var)> = self.leased.iter().map(|(k, v)| (*k, *v)).collect();
        ids.sort_by_key(|(id, _)| *id);
        for (id, var) in ids {
            let g = &grads[var.0];
            let dst = store.grad_mut(id).data_mut();
            for (d, s) in dst.iter_mut().zip(g.iter()) {
                *d += s;
            }
        }
    }
}
