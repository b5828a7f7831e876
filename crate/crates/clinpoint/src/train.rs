//! Training, evaluation, and checkpointing.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, EventBatch};
use crate::error::{Error, Result};
use crate::hierarchy::{forward, HierarchyModel, ModelConfig};
use crate::metrics::{self, Metrics};
use crate::objectives::{
    entropy_inference, global_inference, supervised_losses, total_loss, Heads,
};
use crate::optim::{AdamWConfig, AdamWState};
use crate::params::ParamStore;
use crate::selfsup::{fga_loss, fgr_loss, FgaConfig};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    Entropy,
    Global,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub seed: u64,
    pub lambda_a: f64,
    pub lambda_r: f64,
    pub tau: f64,
    pub fga_excluded: Vec<usize>,
    pub detach_recon_target: bool,
    pub normalize_losses: bool,
    pub branch: InferenceMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 8e-4,
            weight_decay: 1e-2,
            epochs: 30,
            batch_size: 8,
            eval_batch_size: 16,
            seed: 0,
            lambda_a: 2e-3,
            lambda_r: 10.0,
            tau: 0.1,
            fga_excluded: Vec::new(),
            detach_recon_target: true,
            normalize_losses: true,
            branch: InferenceMode::Entropy,
        }
    }
}

/// The hierarchy plus its classifier heads.
pub struct Model {
    pub hierarchy: HierarchyModel,
    pub heads: Heads,
}

impl Model {
    pub fn new(store: &mut ParamStore, cfg: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let heads = Heads::new(store, cfg.modalities, cfg.width, rng)?;
        let hierarchy = HierarchyModel::new(store, cfg, rng)?;
        Ok(Model { hierarchy, heads })
    }

    /// Deterministic construction from a seed.
    pub fn seeded(store: &mut ParamStore, cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Model::new(store, cfg, &mut rng)
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct LossBreakdown {
    pub global: f64,
    pub cross_modal: f64,
    pub unimodal: f64,
    pub align: f64,
    pub recon: f64,
    pub total: f64,
}

/// Assemble the full training loss for one mini-batch.
pub fn batch_loss(
    tape: &mut Tape,
    store: &ParamStore,
    model: &Model,
    batch: &EventBatch,
    cfg: &TrainConfig,
) -> Result<(Var, LossBreakdown)> {
    let outputs = forward(tape, store, &model.hierarchy, batch)?;
    let fga_cfg = FgaConfig {
        temperature: cfg.tau,
        excluded_modalities: cfg.fga_excluded.clone(),
    };
    let align = fga_loss(tape, &outputs.h2, &batch.availability, &fga_cfg)?;
    let recon = fgr_loss(
        tape,
        outputs.recon,
        &outputs.h4,
        &batch.availability,
        cfg.detach_recon_target,
        cfg.normalize_losses,
    )?;
    let sup = supervised_losses(
        tape,
        store,
        &outputs,
        batch,
        &model.heads,
        cfg.normalize_losses,
    )?;
    let total = total_loss(tape, &sup, align, recon, cfg.lambda_a, cfg.lambda_r)?;
    let breakdown = LossBreakdown {
        global: tape.value(sup.global).item(),
        cross_modal: tape.value(sup.cross_modal).item(),
        unimodal: tape.value(sup.unimodal).item(),
        align: tape.value(align).item(),
        recon: tape.value(recon).item(),
        total: tape.value(total).item(),
    };
    Ok((total, breakdown))
}

/// Per-case predictions over a dataset, batched in case order. Returns
/// positive-class probabilities and labels for labeled cases.
pub fn evaluate(
    store: &ParamStore,
    model: &Model,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for batch in dataset.batches(cfg.eval_batch_size)? {
        let mut tape = Tape::new();
        let outputs = forward(&mut tape, store, &model.hierarchy, &batch)?;
        for c in 0..batch.case_count() {
            if !batch.label_mask[c] {
                continue;
            }
            let p = match cfg.branch {
                InferenceMode::Entropy => {
                    entropy_inference(&mut tape, store, &outputs, &batch, &model.heads, c)?.0
                }
                InferenceMode::Global => {
                    global_inference(&mut tape, store, &outputs, &model.heads, c)?
                }
            };
            probs.push(p);
            labels.push(batch.labels[c]);
        }
    }
    Ok((probs, labels))
}

pub fn evaluate_metrics(
    store: &ParamStore,
    model: &Model,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<Metrics> {
    let (probs, labels) = evaluate(store, model, dataset, cfg)?;
    metrics::compute(&probs, &labels)
}

/// One metric-log record per epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(rename = "L_g")]
    pub l_g: f64,
    #[serde(rename = "L_f")]
    pub l_f: f64,
    #[serde(rename = "L_s")]
    pub l_s: f64,
    #[serde(rename = "L_a")]
    pub l_a: f64,
    #[serde(rename = "L_r")]
    pub l_r: f64,
    #[serde(rename = "L_total")]
    pub l_total: f64,
    pub val_auroc: f64,
    pub val_auprc: f64,
    pub val_f1: f64,
}

pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_auroc: f64,
    pub best_path: PathBuf,
    pub last_path: PathBuf,
}

fn save_checkpoint(
    path: &Path,
    store: &ParamStore,
    opt: &AdamWState,
    config_hash: &str,
    epoch: usize,
) -> Result<()> {
    let mut ck = Checkpoint::new(config_hash.to_string(), opt.step, epoch as u64);
    for (id, p) in store.iter() {
        ck.insert(p.name.clone(), p.value.clone());
        ck.insert(format!("optim.m.{}", p.name), opt.m[id].clone());
        ck.insert(format!("optim.v.{}", p.name), opt.v[id].clone());
    }
    ck.save(path)
}

/// Restore parameters and optimizer moments from a checkpoint; returns the
/// epoch the checkpoint was written at.
pub fn load_checkpoint(
    path: &Path,
    store: &mut ParamStore,
    opt: Option<&mut AdamWState>,
) -> Result<(String, u64, usize)> {
    let ck = Checkpoint::load(path)?;
    for (id, name) in (0..store.len())
        .map(|id| (id, store.name(id).to_string()))
        .collect::<Vec<_>>()
    {
        let t = ck
            .tensors
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if t.shape() != store.value(id).shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: checkpoint shape {:?} vs model {:?}",
                t.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = t.clone();
    }
    if let Some(opt) = opt {
        for (id, name) in (0..store.len())
            .map(|id| (id, store.name(id).to_string()))
            .collect::<Vec<_>>()
        {
            if let (Some(m), Some(v)) = (
                ck.tensors.get(&format!("optim.m.{name}")),
                ck.tensors.get(&format!("optim.v.{name}")),
            ) {
                opt.m[id] = m.clone();
                opt.v[id] = v.clone();
            }
        }
        opt.step = ck.step;
    }
    Ok((ck.config_hash.clone(), ck.step, ck.epoch as usize))
}

pub struct TrainSession<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub out_dir: &'a Path,
    pub config_hash: &'a str,
    pub resume: Option<&'a Path>,
    /// Optional sink for per-epoch progress lines.
    pub verbose: bool,
}

/// Full training run: deterministic given (config, seed). Writes
/// `metrics.ndjson`, `last.ckpt`, and `best.ckpt` under `out_dir`.
pub fn train(
    store: &mut ParamStore,
    model: &Model,
    cfg: &TrainConfig,
    session: &TrainSession<'_>,
) -> Result<TrainOutcome> {
    std::fs::create_dir_all(session.out_dir)?;
    let mut opt = AdamWState::new(
        AdamWConfig {
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        store,
    );
    let mut start_epoch = 1usize;
    if let Some(resume) = session.resume {
        let (hash, _, epoch) = load_checkpoint(resume, store, Some(&mut opt))?;
        if hash != session.config_hash {
            return Err(Error::Checkpoint(format!(
                "resume config hash {hash} differs from current {}",
                session.config_hash
            )));
        }
        start_epoch = epoch + 1;
    }

    let log_path = session.out_dir.join("metrics.ndjson");
    let mut log_file = if start_epoch == 1 {
        std::fs::File::create(&log_path)?
    } else {
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)?
    };
    let best_path = session.out_dir.join("best.ckpt");
    let last_path = session.out_dir.join("last.ckpt");

    let case_count = session.train.cases.len();
    let mut logs = Vec::new();
    let mut best_auroc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    for epoch in start_epoch..=cfg.epochs {
        // Data order is a pure function of (seed, epoch) so resumed runs
        // shuffle identically.
        let mut order: Vec<usize> = (0..case_count).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37));
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let cases: Vec<_> = chunk
                .iter()
                .map(|&i| session.train.cases[i].clone())
                .collect();
            let batch =
                EventBatch::from_cases(&cases, session.train.modalities, session.train.horizon)?;
            let mut tape = Tape::new();
            let (loss, parts) = batch_loss(&mut tape, store, model, &batch, cfg)?;
            tape.backward(loss)?;
            tape.accumulate_grads(store);
            opt.step(store);
            sums.global += parts.global;
            sums.cross_modal += parts.cross_modal;
            sums.unimodal += parts.unimodal;
            sums.align += parts.align;
            sums.recon += parts.recon;
            sums.total += parts.total;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        let m = evaluate_metrics(store, model, session.val, cfg)?;
        let entry = EpochLog {
            epoch,
            l_g: sums.global / n,
            l_f: sums.cross_modal / n,
            l_s: sums.unimodal / n,
            l_a: sums.align / n,
            l_r: sums.recon / n,
            l_total: sums.total / n,
            val_auroc: m.auroc,
            val_auprc: m.auprc,
            val_f1: m.f1,
        };
        serde_json::to_writer(&mut log_file, &entry)?;
        log_file.write_all(b"\n")?;
        log_file.flush()?;
        if session.verbose {
            eprintln!(
                "epoch {epoch:3}  L_total {:.4}  val auroc {:.4}  auprc {:.4}  f1 {:.4}",
                entry.l_total, m.auroc, m.auprc, m.f1
            );
        }
        save_checkpoint(&last_path, store, &opt, session.config_hash, epoch)?;
        if m.auroc > best_auroc {
            best_auroc = m.auroc;
            best_epoch = epoch;
            save_checkpoint(&best_path, store, &opt, session.config_hash, epoch)?;
        }
        logs.push(entry);
    }
    Ok(TrainOutcome {
        logs,
        best_epoch,
        best_auroc,
        best_path,
        last_path,
    })
}
