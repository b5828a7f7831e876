//! Synthesize an incomplete multimodal event stream and write it in the
//! dataset file format.
//!
//! ```bash
//! cargo run --release --example generate_dataset
//! ```

use clinpoint::data::{ingest, write_dataset, DataConfig, EventBatch};
use clinpoint::synth::{generate, GenConfig, TaskKind};

fn main() -> clinpoint::Result<()> {
    let cfg = GenConfig {
        cases: 200,
        modality_missing_rate: 0.53,
        label_missing_rate: 0.5,
        task: TaskKind::Separable,
        seed: 7,
        ..Default::default()
    };
    let (cases, latents) = generate(&cfg)?;

    let dir = std::env::temp_dir().join("clinpoint_example_data");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("demo.ndjson");
    write_dataset(&path, &cases)?;
    println!("wrote {}", path.display());

    // Round-trip and derive the availability/label masks.
    let ds = ingest(&path, &DataConfig::default())?;
    assert_eq!(ds.cases, cases);
    let batch = EventBatch::from_cases(&ds.cases, 2, 48.0)?;
    let events: usize = batch.events.iter().flatten().map(|s| s.len()).sum();
    let incomplete = batch
        .availability
        .iter()
        .filter(|mu| mu.iter().any(|&m| !m))
        .count();
    let labeled = batch.label_mask.iter().filter(|&&l| l).count();
    let positives = batch
        .labels
        .iter()
        .zip(&batch.label_mask)
        .filter(|(&y, &l)| l && y == 1)
        .count();
    println!("cases: {}", batch.case_count());
    println!("events: {events} (irregular timestamps over a 48h horizon)");
    println!(
        "modality-incomplete cases: {incomplete} ({:.0}%)",
        100.0 * incomplete as f64 / batch.case_count() as f64
    );
    println!(
        "labeled cases: {labeled} ({positives} positive), oracle score range [{:.2}, {:.2}]",
        latents.iter().map(|l| l.score).fold(f64::INFINITY, f64::min),
        latents.iter().map(|l| l.score).fold(f64::NEG_INFINITY, f64::max),
    );
    Ok(())
}
