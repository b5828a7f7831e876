//! Measured operation counts: the coupled path grows linearly in
//! rank * width * dims while the full-tensor route multiplies by the width
//! for every added dimension.
//!
//! ```bash
//! cargo run --release --example complexity_sweep
//! ```

use clinpoint::bench;

fn main() -> clinpoint::Result<()> {
    let rows = bench::run_sweep(500, 0)?;
    print!("{}", bench::format_table(&rows));
    let (slope, intercept, r2) = bench::coupled_linear_fit(&rows);
    println!("\ncoupled flops ~ {slope:.2} * (rank*width*dims) + {intercept:.1}   r^2 = {r2:.5}");
    for (width, rank, ratio) in bench::oracle_growth_ratios(&rows) {
        if rank == 8 {
            println!("oracle flops ratio dims 3 -> 4 at width {width}: {ratio:.3}");
        }
    }
    Ok(())
}
