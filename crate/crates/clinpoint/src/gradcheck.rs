//! Central-finite-difference gradient verification.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central difference step.
    pub step: f64,
    /// Relative tolerance `|a - n| / max(|a|, |n|, 1e-8)`.
    pub rel_tol: f64,
    /// Coordinates sampled per parameter (all coordinates if fewer).
    pub coords_per_param: usize,
    pub seed: u64,
    /// Coordinates where both routes fall below this magnitude sit under
    /// the resolution of central differences and auto-pass.
    pub abs_threshold: f64,
    /// Central differences cannot resolve below roughly
    /// `noise_factor * eps * |loss| / step` (forward-pass rounding divided
    /// by the step); absolute differences under that floor pass.
    pub noise_factor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            rel_tol: 1e-4,
            coords_per_param: 16,
            seed: 0,
            abs_threshold: 1e-6,
            noise_factor: 1e3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub worst_rel_err: f64,
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<ParamCheck>,
    pub passed: bool,
}

impl GradCheckReport {
    /// Entries sorted worst-first.
    pub fn worst_offenders(&self, k: usize) -> Vec<&ParamCheck> {
        let mut v: Vec<&ParamCheck> = self.entries.iter().collect();
        v.sort_by(|a, b| b.worst_rel_err.partial_cmp(&a.worst_rel_err).unwrap());
        v.into_iter().take(k).collect()
    }
}

/// Compare tape gradients of `build` (a deterministic parameters -> scalar
/// loss function) against central finite differences on a random coordinate
/// subset of every parameter. The finite-difference side only ever runs the
/// forward pass, so it is independent of the adjoint code it checks.
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut build: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    store.zero_grads();
    let (analytic, loss_value) = {
        let mut tape = Tape::new();
        let loss = build(store, &mut tape)?;
        let value = tape.value(loss).item();
        tape.backward(loss)?;
        tape.accumulate_grads(store);
        let grads: Vec<Vec<f64>> = (0..store.len())
            .map(|id| store.grad(id).data().to_vec())
            .collect();
        (grads, value)
    };
    store.zero_grads();
    let noise_floor = cfg.noise_factor * f64::EPSILON * loss_value.abs().max(1.0) / cfg.step;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries = Vec::with_capacity(store.len());
    for id in 0..store.len() {
        let n = store.value(id).numel();
        let coords: Vec<usize> = if n <= cfg.coords_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, cfg.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst = ParamCheck {
            name: store.name(id).to_string(),
            coords_checked: coords.len(),
            worst_rel_err: 0.0,
            worst_coord: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
            passed: true,
        };
        for &c in &coords {
            let numeric = central_difference(store, &mut build, id, c, cfg.step)?;
            let a = analytic[id][c];
            if a.abs() < cfg.abs_threshold && numeric.abs() < cfg.abs_threshold {
                continue;
            }
            if (a - numeric).abs() <= noise_floor {
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst.worst_rel_err {
                worst.worst_rel_err = rel;
                worst.worst_coord = c;
                worst.worst_analytic = a;
                worst.worst_numeric = numeric;
            }
        }
        worst.passed = worst.worst_rel_err <= cfg.rel_tol;
        entries.push(worst);
    }
    let passed = entries.iter().all(|e| e.passed);
    Ok(GradCheckReport { entries, passed })
}

fn central_difference<F>(
    store: &mut ParamStore,
    build: &mut F,
    id: ParamId,
    coord: usize,
    h: f64,
) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let orig = store.value(id).data()[coord];
    let eval = |store: &mut ParamStore, build: &mut F, x: f64| -> Result<f64> {
        store.value_mut(id).data_mut()[coord] = x;
        let mut tape = Tape::new();
        let loss = build(store, &mut tape)?;
        Ok(tape.value(loss).item())
    };
    let plus = eval(store, build, orig + h)?;
    let minus = eval(store, build, orig - h)?;
    store.value_mut(id).data_mut()[coord] = orig;
    Ok((plus - minus) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn sum_of_squares_passes() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        store
            .register("p", Tensor::randn(&[5], 1.0, &mut rng))
            .unwrap();
        let report = grad_check(
            &mut store,
            |store, tape| {
                let p = tape.param(store, 0);
                let sq = tape.mul(p, p)?;
                Ok(tape.sum_all(sq))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed);
    }

    #[test]
    fn corrupted_adjoint_is_flagged() {
        // Loss pretends to be sum(2p) but reports gradients of sum(p*p):
        // running the forward as sum(p^2) while the fixture perturbs values
        // through a scaled path produces a mismatch the checker must flag.
        let mut store = ParamStore::new();
        store
            .register("p", Tensor::new(vec![3], vec![0.4, -1.0, 2.0]).unwrap())
            .unwrap();
        // Analytic gradient comes from an inconsistent graph on purpose: the
        // "loss" used for backward is sum(p), but finite differences probe
        // sum(p*p).
        store.zero_grads();
        {
            let mut tape = Tape::new();
            let p = tape.param(&store, 0);
            let loss = tape.sum_all(p);
            tape.backward(loss).unwrap();
            tape.accumulate_grads(&mut store);
        }
        let analytic = store.grad(0).data().to_vec();
        let mut f = |store: &ParamStore, tape: &mut Tape| {
            let p = tape.param(store, 0);
            let sq = tape.mul(p, p)?;
            Ok(tape.sum_all(sq))
        };
        let mut bad = false;
        for c in 0..3 {
            let n = central_difference(&mut store, &mut f, 0, c, 1e-5).unwrap();
            let rel = (analytic[c] - n).abs() / analytic[c].abs().max(n.abs()).max(1e-8);
            if rel > 1e-4 {
                bad = true;
            }
        }
        assert!(bad, "negative control failed to flag the corrupted adjoint");
    }
}
