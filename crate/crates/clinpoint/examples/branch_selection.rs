//! Entropy-based inference: per case, the unimodal, cross-modal, and global
//! branches each emit a class distribution and the least-entropic wins.
//!
//! ```bash
//! cargo run --release --example branch_selection
//! ```

use clinpoint::config::{RunConfig, Split};
use clinpoint::data::{Dataset, EventBatch};
use clinpoint::hierarchy::forward;
use clinpoint::objectives::branch_distributions;
use clinpoint::params::ParamStore;
use clinpoint::synth::generate;
use clinpoint::tape::Tape;
use clinpoint::train::{train, Model, TrainSession};

fn main() -> clinpoint::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.data.cases = 200;
    cfg.data.val_cases = 80;
    cfg.train.epochs = 4;
    cfg.train.seed = 6;
    let mk = |split| -> clinpoint::Result<Dataset> {
        let (cases, _) = generate(&cfg.gen_config(split))?;
        Ok(Dataset {
            cases,
            modalities: 2,
            horizon: 48.0,
        })
    };
    let train_set = mk(Split::Train)?;
    let val_set = mk(Split::Val)?;
    let mut store = ParamStore::new();
    let model = Model::seeded(&mut store, cfg.model_config(), cfg.train.seed)?;
    let out_dir = std::env::temp_dir().join("clinpoint_example_branches");
    let hash = cfg.hash();
    train(
        &mut store,
        &model,
        &cfg.train_config(),
        &TrainSession {
            train: &train_set,
            val: &val_set,
            out_dir: &out_dir,
            config_hash: &hash,
            resume: None,
            verbose: false,
        },
    )?;

    let batch = EventBatch::from_cases(&val_set.cases[..8], 2, 48.0)?;
    let mut tape = Tape::new();
    let outputs = forward(&mut tape, &store, &model.hierarchy, &batch)?;
    println!("case  observed   branch entropies (selected in caps)");
    for c in 0..batch.case_count() {
        let cands = branch_distributions(&mut tape, &store, &outputs, &batch, &model.heads, c)?;
        let entropy = |p: &[f64; 2]| -> f64 {
            p.iter().filter(|v| **v > 0.0).map(|v| -v * v.ln()).sum()
        };
        let best = cands
            .iter()
            .enumerate()
            .min_by(|(ai, a), (bi, b)| {
                entropy(&a.1)
                    .partial_cmp(&entropy(&b.1))
                    .unwrap()
                    .then(ai.cmp(bi))
            })
            .map(|(i, _)| i)
            .unwrap();
        let obs: Vec<usize> = (0..2).filter(|&m| batch.availability[c][m]).collect();
        let mut line = format!("{c:4}  {obs:?}      ");
        for (i, (branch, p)) in cands.iter().enumerate() {
            let tag = branch.tag();
            let shown = if i == best {
                tag.to_uppercase()
            } else {
                tag.clone()
            };
            line.push_str(&format!("{shown}={:.3} ", entropy(p)));
        }
        println!("{line}");
    }
    Ok(())
}
