//! Small trainable building blocks composed from tape primitives.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Smooth gate used everywhere a nonlinearity is needed:
/// `0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 x^3)))`.
pub fn gelu(tape: &mut Tape, x: Var) -> Result<Var> {
    Ok(tape.gelu(x))
}

/// `y = x @ w + b`, weight stored as `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let std = 1.0 / (in_dim as f64).sqrt();
        let w = store.register(format!("{name}.w"), Tensor::randn(&[in_dim, out_dim], std, rng))?;
        let b = store.register(format!("{name}.b"), Tensor::zeros(&[out_dim]))?;
        Ok(Linear {
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }
}

/// Two-layer perceptron with a GELU hidden layer.
#[derive(Debug, Clone)]
pub struct Mlp2 {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp2 {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Mlp2 {
            l1: Linear::new(store, &format!("{name}.l1"), in_dim, hidden, rng)?,
            l2: Linear::new(store, &format!("{name}.l2"), hidden, out_dim, rng)?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.l1.apply(tape, store, x)?;
        let h = gelu(tape, h)?;
        self.l2.apply(tape, store, h)
    }
}

/// Row-wise layer normalization with learnable gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.register(format!("{name}.gain"), Tensor::full(&[dim], 1.0))?,
            bias: store.register(format!("{name}.bias"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let core = tape.layer_norm(x, 1e-8)?;
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        let scaled = tape.mul(core, g)?;
        tape.add(scaled, b)
    }
}

/// One GRU direction. Update/reset gates use sigmoid, the candidate uses
/// tanh with the reset gate applied to the recurrent term.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub wz: Linear,
    pub uz: ParamId,
    pub wr: Linear,
    pub ur: ParamId,
    pub wn: Linear,
    pub un: ParamId,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let std = 1.0 / (hidden as f64).sqrt();
        Ok(GruCell {
            wz: Linear::new(store, &format!("{name}.wz"), in_dim, hidden, rng)?,
            uz: store.register(format!("{name}.uz"), Tensor::randn(&[hidden, hidden], std, rng))?,
            wr: Linear::new(store, &format!("{name}.wr"), in_dim, hidden, rng)?,
            ur: store.register(format!("{name}.ur"), Tensor::randn(&[hidden, hidden], std, rng))?,
            wn: Linear::new(store, &format!("{name}.wn"), in_dim, hidden, rng)?,
            un: store.register(format!("{name}.un"), Tensor::randn(&[hidden, hidden], std, rng))?,
            hidden,
        })
    }

    /// One step over a `(batch, in_dim)` input with `(batch, hidden)` state.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let uz = tape.param(store, self.uz);
        let ur = tape.param(store, self.ur);
        let un = tape.param(store, self.un);
        let zx = self.wz.apply(tape, store, x)?;
        let zh = tape.matmul(h, uz)?;
        let z = tape.add(zx, zh)?;
        let z = tape.sigmoid(z);
        let rx = self.wr.apply(tape, store, x)?;
        let rh = tape.matmul(h, ur)?;
        let r = tape.add(rx, rh)?;
        let r = tape.sigmoid(r);
        let nx = self.wn.apply(tape, store, x)?;
        let nh = tape.matmul(h, un)?;
        let nh = tape.mul(r, nh)?;
        let n = tape.add(nx, nh)?;
        let n = tape.tanh(n);
        // h' = (1 - z) * n + z * h
        let zn = tape.mul(z, n)?;
        let zh = tape.mul(z, h)?;
        let nh = tape.sub(n, zn)?;
        tape.add(nh, zh)
    }

    /// Run over a step-major sequence, returning the final state.
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, steps: &[Var], batch: usize) -> Result<Var> {
        let mut h = tape.input(Tensor::zeros(&[batch, self.hidden]));
        for &x in steps {
            h = self.step(tape, store, x, h)?;
        }
        Ok(h)
    }
}

/// Bidirectional GRU: last forward state and last backward state are
/// concatenated and linearly projected to the output width.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub fwd: GruCell,
    pub bwd: GruCell,
    pub proj: Linear,
}

impl BiGru {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(BiGru {
            fwd: GruCell::new(store, &format!("{name}.fwd"), in_dim, hidden, rng)?,
            bwd: GruCell::new(store, &format!("{name}.bwd"), in_dim, hidden, rng)?,
            proj: Linear::new(store, &format!("{name}.proj"), 2 * hidden, out_dim, rng)?,
        })
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        steps: &[Var],
        batch: usize,
    ) -> Result<Var> {
        let hf = self.fwd.run(tape, store, steps, batch)?;
        let rev: Vec<Var> = steps.iter().rev().copied().collect();
        let hb = self.bwd.run(tape, store, &rev, batch)?;
        let cat = tape.concat(&[hf, hb], 1)?;
        self.proj.apply(tape, store, cat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckConfig};
    use rand::SeedableRng;

    #[test]
    fn gelu_odd_difference_is_identity() {
        // gelu(x) - gelu(-x) == x exactly, which the identity-constructed
        // encoders rely on.
        let mut tape = Tape::new();
        for &v in &[0.0, 0.3, -1.7, 4.0] {
            let x = tape.input(Tensor::scalar(v));
            let gx = gelu(&mut tape, x).unwrap();
            let nx = tape.scale(x, -1.0);
            let gnx = gelu(&mut tape, nx).unwrap();
            let diff = tape.sub(gx, gnx).unwrap();
            assert!((tape.value(diff).item() - v).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let gru = BiGru::new(&mut store, "g", 3, 4, 3, &mut rng).unwrap();
        let xs: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[2, 3], 0.7, &mut rng)).collect();
        let report = grad_check(
            &mut store,
            |store, tape| {
                let steps: Vec<Var> = xs.iter().map(|t| tape.input(t.clone())).collect();
                let out = gru.apply(tape, store, &steps, 2)?;
                let sq = tape.mul(out, out)?;
                Ok(tape.sum_all(sq))
            },
            &GradCheckConfig {
                coords_per_param: 6,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.passed, "{:?}", report.worst_offenders(3));
    }

    #[test]
    fn layer_norm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 4).unwrap();
        let xid = store
            .register("x", Tensor::randn(&[3, 4], 1.0, &mut rng))
            .unwrap();
        let report = grad_check(
            &mut store,
            |store, tape| {
                let x = tape.param(store, xid);
                let y = ln.apply(tape, store, x)?;
                let w = tape.tanh(y);
                Ok(tape.mean_all(w))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed, "{:?}", report.worst_offenders(3));
    }
}
