//! Measured complexity of the coupled logit path versus the full-tensor
//! route: flop counters from the implementations themselves, a linear fit
//! of the coupled counts against `rank * width * dims`, and the per-added-
//! dimension growth of the full-tensor counts.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coupling::{
    couple_counted, full_tensor_oracle_counted, ActiveDims, CouplingValues, Dim, RelationFeatures,
};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub width: usize,
    pub rank: usize,
    pub dims: usize,
    pub coupled_flops: u64,
    pub oracle_flops: u64,
    pub coupled_nanos: u64,
    pub oracle_nanos: u64,
}

fn config_for(width: usize, rank: usize, ndims: usize, rng: &mut ChaCha8Rng) -> (RelationFeatures, CouplingValues) {
    let dims = ActiveDims::from_dims(&Dim::ALL[..ndims]);
    let mut rel = RelationFeatures::default();
    let mut q = Vec::new();
    let mut w = Vec::new();
    for dim in dims.list() {
        rel.set(dim, (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect());
        q.push(Tensor::randn(&[rank, width], 0.5, rng));
        w.push(Tensor::randn(&[width], 0.5, rng));
    }
    (
        rel,
        CouplingValues {
            dims,
            rank,
            q,
            w,
            bias: 0.1,
        },
    )
}

/// Sweep widths {2,3,4} x dims {1..4} x ranks {1,2,4,8}, measuring both op
/// counts and wall time over `pairs` evaluations per configuration.
pub fn run_sweep(pairs: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for width in [2usize, 3, 4] {
        for ndims in 1..=4usize {
            for rank in [1usize, 2, 4, 8] {
                let (rel, cv) = config_for(width, rank, ndims, &mut rng);
                let (_, coupled_flops) = couple_counted(&rel, &cv)?;
                let (_, oracle_flops) = full_tensor_oracle_counted(&rel, &cv)?;
                let t0 = std::time::Instant::now();
                let mut sink = 0.0;
                for _ in 0..pairs {
                    sink += couple_counted(&rel, &cv)?.0;
                }
                let coupled_nanos = t0.elapsed().as_nanos() as u64;
                let t0 = std::time::Instant::now();
                for _ in 0..pairs {
                    sink += full_tensor_oracle_counted(&rel, &cv)?.0;
                }
                let oracle_nanos = t0.elapsed().as_nanos() as u64;
                std::hint::black_box(sink);
                rows.push(BenchRow {
                    width,
                    rank,
                    dims: ndims,
                    coupled_flops,
                    oracle_flops,
                    coupled_nanos,
                    oracle_nanos,
                });
            }
        }
    }
    Ok(rows)
}

/// Least-squares fit of `y = a*x + b` with `x = rank * width * dims`,
/// returning (a, b, r_squared).
pub fn coupled_linear_fit(rows: &[BenchRow]) -> (f64, f64, f64) {
    let xs: Vec<f64> = rows
        .iter()
        .map(|r| (r.rank * r.width * r.dims) as f64)
        .collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.coupled_flops as f64).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (a * x + b);
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    (a, b, 1.0 - ss_res / ss_tot)
}

/// For each (width, rank): the oracle flop ratio between four and three
/// active dimensions. The full-tensor route grows by a factor of the width
/// per added dimension.
pub fn oracle_growth_ratios(rows: &[BenchRow]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for width in [2usize, 3, 4] {
        for rank in [1usize, 2, 4, 8] {
            let f = |d: usize| {
                rows.iter()
                    .find(|r| r.width == width && r.rank == rank && r.dims == d)
                    .map(|r| r.oracle_flops as f64)
            };
            if let (Some(f3), Some(f4)) = (f(3), f(4)) {
                out.push((width, rank, f4 / f3));
            }
        }
    }
    out
}

/// Rank-doubling behavior of the coupled term: flops excluding the
/// rank-independent unary part must double exactly.
pub fn rank_doubling_exact(rows: &[BenchRow]) -> bool {
    for width in [2usize, 3, 4] {
        for ndims in 1..=4usize {
            let f = |rank: usize| {
                rows.iter()
                    .find(|r| r.width == width && r.rank == rank && r.dims == ndims)
                    .map(|r| r.coupled_flops)
            };
            let unary = (ndims * (2 * width + 1)) as u64;
            for (lo, hi) in [(1usize, 2usize), (2, 4), (4, 8)] {
                match (f(lo), f(hi)) {
                    (Some(a), Some(b)) => {
                        if b - unary != 2 * (a - unary) {
                            return false;
                        }
                    }
                    _ => return false,
                }
            }
        }
    }
    true
}

/// Render the sweep as an aligned table.
pub fn format_table(rows: &[BenchRow]) -> String {
    let mut s = String::from(
        "width  dims  rank  coupled_flops  oracle_flops  coupled_ns  oracle_ns\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{:5}  {:4}  {:4}  {:13}  {:12}  {:10}  {:9}\n",
            r.width, r.dims, r.rank, r.coupled_flops, r.oracle_flops, r.coupled_nanos,
            r.oracle_nanos
        ));
    }
    s
}
