//! End-to-end run at toy scale: synthesize incomplete data, train with the
//! full objective, evaluate with entropy-based branch selection.
//!
//! ```bash
//! cargo run --release --example train_and_evaluate
//! ```

use clinpoint::config::{RunConfig, Split};
use clinpoint::data::Dataset;
use clinpoint::metrics;
use clinpoint::params::ParamStore;
use clinpoint::synth::generate;
use clinpoint::train::{evaluate, train, Model, TrainSession};

fn main() -> clinpoint::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.data.cases = 300;
    cfg.data.val_cases = 150;
    cfg.train.epochs = 6;
    cfg.train.seed = 2;
    cfg.validate()?;

    let mk = |split| -> clinpoint::Result<Dataset> {
        let (cases, _) = generate(&cfg.gen_config(split))?;
        Ok(Dataset {
            cases,
            modalities: cfg.data.modalities,
            horizon: cfg.data.horizon,
        })
    };
    let train_set = mk(Split::Train)?;
    let val_set = mk(Split::Val)?;
    let test_set = mk(Split::Test)?;

    let mut store = ParamStore::new();
    let model = Model::seeded(&mut store, cfg.model_config(), cfg.train.seed)?;
    let out_dir = std::env::temp_dir().join("clinpoint_example_run");
    let hash = cfg.hash();
    let outcome = train(
        &mut store,
        &model,
        &cfg.train_config(),
        &TrainSession {
            train: &train_set,
            val: &val_set,
            out_dir: &out_dir,
            config_hash: &hash,
            resume: None,
            verbose: true,
        },
    )?;
    println!(
        "best validation AUROC {:.4} at epoch {}",
        outcome.best_auroc, outcome.best_epoch
    );

    let (probs, labels) = evaluate(&store, &model, &test_set, &cfg.train_config())?;
    let m = metrics::compute(&probs, &labels)?;
    println!(
        "test: auroc {:.4}  auprc {:.4}  f1 {:.4}  ({} cases)",
        m.auroc,
        m.auprc,
        m.f1,
        labels.len()
    );
    println!("metric log and checkpoints in {}", out_dir.display());
    Ok(())
}
