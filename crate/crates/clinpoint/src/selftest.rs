//! Built-in verification suite: oracle equivalence sweeps, gradient checks,
//! brute-force neighborhood scans, and softmax/mask invariants. Every check
//! here has an implementation-independent second route.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coupling::{couple, full_tensor_oracle, ActiveDims, CouplingValues, Dim, RelationFeatures};
use crate::data::{EventBatch, PointCloud};
use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckConfig};
use crate::hierarchy::{build_neighborhoods, forward, level_specs, LevelRule, ModelConfig};
use crate::params::ParamStore;
use crate::synth::{generate, GenConfig, TaskKind};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::train::{batch_loss, Model, TrainConfig};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &'static str, outcome: std::result::Result<String, String>) {
        match outcome {
            Ok(detail) => self.checks.push(CheckResult {
                name,
                passed: true,
                detail,
            }),
            Err(detail) => self.checks.push(CheckResult {
                name,
                passed: false,
                detail,
            }),
        }
    }
}

/// O(N^2) predicate scan over all tokens for one query; the level-1 cap
/// applies the same pinned selection rule (closest |dt| first, self wins
/// ties, then lower index) before re-sorting ascending.
pub fn bruteforce_neighbors(cloud: &PointCloud, rule: &LevelRule, i: usize) -> Vec<u32> {
    let n = cloud.len();
    let same_case = |j: usize| cloud.case[j] == cloud.case[i];
    let same_mod = |j: usize| cloud.modality[j] == cloud.modality[i];
    match rule {
        LevelRule::Local { delta, k_max } => {
            let mut cand: Vec<usize> = (0..n)
                .filter(|&j| {
                    same_case(j)
                        && same_mod(j)
                        && (cloud.time[i] - cloud.time[j]).abs() <= *delta
                })
                .collect();
            cand.sort_by(|&a, &b| {
                let da = (cloud.time[i] - cloud.time[a]).abs();
                let db = (cloud.time[i] - cloud.time[b]).abs();
                (da, a != i, a).partial_cmp(&(db, b != i, b)).unwrap()
            });
            cand.truncate(*k_max);
            cand.sort_unstable();
            cand.into_iter().map(|j| j as u32).collect()
        }
        LevelRule::IntraModality => (0..n)
            .filter(|&j| same_case(j) && same_mod(j))
            .map(|j| j as u32)
            .collect(),
        LevelRule::CrossModality => (0..n)
            .filter(|&j| j == i || (same_case(j) && !same_mod(j)))
            .map(|j| j as u32)
            .collect(),
        LevelRule::CrossSample => (0..n)
            .filter(|&j| j == i || !same_case(j))
            .map(|j| j as u32)
            .collect(),
        LevelRule::Fusion => (0..n)
            .filter(|&j| same_case(j))
            .map(|j| j as u32)
            .collect(),
    }
}

/// CP-oracle equivalence sweep: every nonempty dimension subset, widths up
/// to `max_width`, ranks up to `max_rank`, `trials` random draws each.
pub fn cp_oracle_sweep(
    max_width: usize,
    max_rank: usize,
    trials: usize,
    seed: u64,
) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut count = 0usize;
    for bits in 1u8..16 {
        let dims: Vec<Dim> = Dim::ALL
            .iter()
            .enumerate()
            .filter(|(i, _)| bits & (1 << i) != 0)
            .map(|(_, d)| *d)
            .collect();
        let dims = ActiveDims::from_dims(&dims);
        for d in 1..=max_width {
            for rank in 1..=max_rank {
                for t in 0..trials {
                    let mut rel = RelationFeatures::default();
                    let mut q = Vec::new();
                    let mut w = Vec::new();
                    for dim in dims.list() {
                        rel.set(dim, (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect());
                        q.push(Tensor::randn(&[rank, d], 1.0, &mut rng));
                        w.push(Tensor::randn(&[d], 0.7, &mut rng));
                    }
                    let cv = CouplingValues {
                        dims,
                        rank,
                        q,
                        w,
                        bias: rng.gen_range(-1.0..1.0),
                    };
                    let a = couple(&rel, &cv).map_err(|e| e.to_string())?;
                    let b = full_tensor_oracle(&rel, &cv).map_err(|e| e.to_string())?;
                    let err = (a - b).abs();
                    let tol = 1e-12 * (1.0 + b.abs());
                    if err > tol {
                        return Err(format!(
                            "dims {dims:?} d {d} rank {rank} trial {t}: |{a} - {b}| = {err} > {tol}"
                        ));
                    }
                    worst = worst.max(err / (1.0 + b.abs()));
                    count += 1;
                }
            }
        }
    }
    Ok(format!("{count} comparisons, worst scaled error {worst:.3e}"))
}

fn selftest_model_config() -> ModelConfig {
    ModelConfig {
        modalities: 2,
        feature_dims: vec![3, 4],
        modality_widths: vec![8, 8],
        width: 8,
        rank: 2,
        heads: 2,
        ffn_multiplier: 2,
        delta: 4.0,
        k_max: 4,
        grid1: vec![12.0, 16.0],
        grid3: vec![24.0, 48.0],
        horizon: 48.0,
        pre_norm: true,
    }
}

fn small_batches(count: usize, seed: u64) -> Result<Vec<EventBatch>> {
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let cases = rng.gen_range(2..=8usize);
        let cfg = GenConfig {
            cases,
            modalities: 2,
            feature_dims: vec![3, 4],
            horizon: 48.0,
            // keeps total events at or below ~40 per batch
            event_rates: vec![0.05, 0.04],
            modality_missing_rate: 0.4,
            label_missing_rate: 0.3,
            task: TaskKind::Separable,
            noise_std: 0.2,
            seed: seed.wrapping_mul(31).wrapping_add(k as u64),
            projection_seed: seed,
        };
        let (records, _) = generate(&cfg)?;
        out.push(EventBatch::from_cases(&records, 2, 48.0)?);
    }
    Ok(out)
}

fn check_neighborhoods(batches: usize, seed: u64) -> std::result::Result<String, String> {
    let cfg = selftest_model_config();
    let mut store = ParamStore::new();
    let model = Model::seeded(&mut store, cfg.clone(), seed).map_err(|e| e.to_string())?;
    let specs = level_specs(cfg.delta, cfg.k_max);
    let mut compared = 0usize;
    let batches = small_batches(batches, seed).map_err(|e| e.to_string())?;
    for (bi, batch) in batches.iter().enumerate() {
        let mut tape = Tape::new();
        // level-1 rule runs on the raw encoded clouds
        let raw = crate::data::encode(&mut tape, &store, &model.hierarchy.encoders, batch)
            .map_err(|e| e.to_string())?;
        for cloud in &raw {
            let nbrs = build_neighborhoods(cloud, &specs[0].rule);
            for i in 0..cloud.len() {
                let expect = bruteforce_neighbors(cloud, &specs[0].rule, i);
                if nbrs.neighbors(i) != expect.as_slice() {
                    return Err(format!("batch {bi} level 1 token {i} mismatch"));
                }
                compared += 1;
            }
        }
        let out = forward(&mut tape, &store, &model.hierarchy, batch).map_err(|e| e.to_string())?;
        for (cloud, spec) in [
            (&out.h2, &specs[1]),
            (&out.h2, &specs[2]),
            (&out.h4_in, &specs[3]),
            (&out.h4_updated, &specs[4]),
        ] {
            let nbrs = build_neighborhoods(cloud, &spec.rule);
            for i in 0..cloud.len() {
                let expect = bruteforce_neighbors(cloud, &spec.rule, i);
                if nbrs.neighbors(i) != expect.as_slice() {
                    return Err(format!(
                        "batch {bi} level {} token {i} mismatch",
                        spec.level
                    ));
                }
                compared += 1;
            }
        }
    }
    Ok(format!("{compared} neighborhoods compared across all five levels"))
}

fn check_gradients(seed: u64) -> std::result::Result<String, String> {
    let cfg = selftest_model_config();
    let mut store = ParamStore::new();
    let model = Model::seeded(&mut store, cfg, seed).map_err(|e| e.to_string())?;
    let batch = &small_batches(1, seed.wrapping_add(99)).map_err(|e| e.to_string())?[0];
    // Finite differences re-run the whole forward, so the frozen
    // reconstruction target must use the symmetric switch here: with the
    // detached default the two routes measure different functions.
    let tcfg = TrainConfig {
        tau: 0.5,
        detach_recon_target: false,
        ..Default::default()
    };
    let report = grad_check(
        &mut store,
        |store, tape| {
            let (loss, _) = batch_loss(tape, store, &model, batch, &tcfg)?;
            Ok(loss)
        },
        &GradCheckConfig {
            coords_per_param: 2,
            seed,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    if report.passed {
        Ok(format!(
            "{} parameter tensors checked, worst {:.3e}",
            report.entries.len(),
            report
                .entries
                .iter()
                .map(|e| e.worst_rel_err)
                .fold(0.0, f64::max)
        ))
    } else {
        Err(format!("{:?}", report.worst_offenders(3)))
    }
}

fn check_softmax_invariants() -> std::result::Result<String, String> {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..50 {
        let n = rng.gen_range(2..7usize);
        let rows = rng.gen_range(1..4usize);
        let data: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let mut mask = vec![0.0; rows * n];
        for r in 0..rows {
            let keep = rng.gen_range(1..=n);
            for k in 0..keep {
                mask[r * n + k] = 1.0;
            }
        }
        let x = tape.input(Tensor::new(vec![rows, n], data).unwrap());
        let m = Tensor::new(vec![rows, n], mask.clone()).unwrap();
        let y = tape.softmax(x, &m).map_err(|e| e.to_string())?;
        let yd = tape.value(y);
        for r in 0..rows {
            let mut sum = 0.0;
            for k in 0..n {
                let v = yd.at2(r, k);
                if mask[r * n + k] == 0.0 && v != 0.0 {
                    return Err(format!("trial {trial}: masked entry nonzero"));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(format!("trial {trial}: row sum {sum}"));
            }
        }
    }
    // fully masked row must error
    let x = tape.input(Tensor::zeros(&[1, 3]));
    let m = Tensor::zeros(&[1, 3]);
    if tape.softmax(x, &m).is_ok() {
        return Err("fully masked row accepted".into());
    }
    Ok("50 random masked softmax trials plus the fully-masked rejection".into())
}

fn check_negative_control() -> std::result::Result<String, String> {
    // A deliberately corrupted adjoint must be flagged: analytic gradients
    // from sum(p) probed against finite differences of sum(p*p).
    let mut store = ParamStore::new();
    store
        .register("p", Tensor::new(vec![3], vec![0.7, -0.4, 1.3]).unwrap())
        .map_err(|e| e.to_string())?;
    let mut tape = Tape::new();
    let p = tape.param(&store, 0);
    let wrong_loss = tape.sum_all(p);
    tape.backward(wrong_loss).map_err(|e| e.to_string())?;
    tape.accumulate_grads(&mut store);
    let analytic = store.grad(0).data().to_vec();
    let eval = |store: &mut ParamStore, c: usize, x: f64| -> f64 {
        let orig = store.value(0).data()[c];
        store.value_mut(0).data_mut()[c] = x;
        let mut t = Tape::new();
        let p = t.param(store, 0);
        let sq = t.mul(p, p).unwrap();
        let l = t.sum_all(sq);
        let v = t.value(l).item();
        store.value_mut(0).data_mut()[c] = orig;
        v
    };
    let mut flagged = false;
    for c in 0..3 {
        let x = store.value(0).data()[c];
        let fd = (eval(&mut store, c, x + 1e-5) - eval(&mut store, c, x - 1e-5)) / 2e-5;
        let rel = (analytic[c] - fd).abs() / analytic[c].abs().max(fd.abs()).max(1e-8);
        if rel > 1e-4 {
            flagged = true;
        }
    }
    if flagged {
        Ok("corrupted adjoint correctly flagged".into())
    } else {
        Err("corrupted adjoint slipped through".into())
    }
}

pub struct SelftestOptions {
    /// Trials per oracle configuration.
    pub oracle_trials: usize,
    /// Random batches for the neighborhood scan.
    pub neighborhood_batches: usize,
    pub seed: u64,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions {
            oracle_trials: 200,
            neighborhood_batches: 100,
            seed: 0,
        }
    }
}

/// Run the whole suite; any failed check carries a named diagnosis.
pub fn run(opts: &SelftestOptions) -> SelftestReport {
    let mut report = SelftestReport::default();
    report.push(
        "cp_oracle_equivalence",
        cp_oracle_sweep(4, 3, opts.oracle_trials, opts.seed),
    );
    report.push(
        "neighborhood_bruteforce",
        check_neighborhoods(opts.neighborhood_batches, opts.seed.wrapping_add(1)),
    );
    report.push("gradient_integrity", check_gradients(opts.seed.wrapping_add(2)));
    report.push("softmax_mask_invariants", check_softmax_invariants());
    report.push("corrupted_adjoint_control", check_negative_control());
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_is_green() {
        let report = run(&SelftestOptions {
            oracle_trials: 5,
            neighborhood_batches: 3,
            seed: 0,
        });
        for c in &report.checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
