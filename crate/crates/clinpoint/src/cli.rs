//! Command implementations behind the `clinpoint` binary: generate, train,
//! eval, selftest, bench. Every command is deterministic given its config
//! and seed. Exit codes: 0 success, 1 validation or invariant failure,
//! 2 usage errors (argument parsing).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, Split};
use crate::data::{ingest, write_dataset, Dataset};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::synth::generate;
use crate::train::{
    evaluate, load_checkpoint, train, InferenceMode, Model, TrainSession,
};
use crate::{bench, metrics, selftest};

#[derive(Debug, Parser)]
#[command(
    name = "clinpoint",
    about = "Clinical event streams as 4D point clouds: generate synthetic data, train, evaluate, verify, and benchmark",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic train/val/test dataset files plus a manifest.
    Generate(GenerateArgs),
    /// Train on a generated dataset; writes checkpoints and a metric log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Run the built-in verification suite.
    Selftest(SelftestArgs),
    /// Measure coupled-path vs full-tensor op counts and timings.
    Bench(BenchArgs),
}

/// Flag overrides shared across commands; a flag always wins over the
/// config file.
#[derive(Debug, Clone, Args)]
pub struct Overrides {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training-split case count.
    #[arg(long)]
    pub cases: Option<usize>,
    #[arg(long = "val-cases")]
    pub val_cases: Option<usize>,
    #[arg(long = "test-cases")]
    pub test_cases: Option<usize>,
    /// Fraction of cases with at least one modality dropped.
    #[arg(long = "modality-missing")]
    pub modality_missing: Option<f64>,
    /// Fraction of training cases without labels.
    #[arg(long = "label-missing")]
    pub label_missing: Option<f64>,
    /// Synthetic task: separable | coupled.
    #[arg(long)]
    pub task: Option<String>,
    /// Coupling rank (0 removes the coupled term's capacity entirely).
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Level-1 window in hours.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long = "lambda-a")]
    pub lambda_a: Option<f64>,
    #[arg(long = "lambda-r")]
    pub lambda_r: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Model width (unified token dimension).
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    /// Inference mode: entropy | global.
    #[arg(long)]
    pub branch: Option<String>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(c) = self.cases {
            cfg.data.cases = c;
        }
        if let Some(c) = self.val_cases {
            cfg.data.val_cases = c;
        }
        if let Some(c) = self.test_cases {
            cfg.data.test_cases = c;
        }
        if let Some(v) = self.modality_missing {
            cfg.data.modality_missing = v;
        }
        if let Some(v) = self.label_missing {
            cfg.data.label_missing = v;
        }
        if let Some(t) = &self.task {
            cfg.data.task = match t.as_str() {
                "separable" => crate::synth::TaskKind::Separable,
                "coupled" => crate::synth::TaskKind::Coupled,
                other => return Err(Error::Config(format!("unknown task '{other}'"))),
            };
        }
        if let Some(r) = self.rank {
            cfg.model.rank = r;
        }
        if let Some(h) = self.heads {
            cfg.model.heads = h;
        }
        if let Some(d) = self.delta {
            cfg.model.delta = d;
        }
        if let Some(v) = self.lambda_a {
            cfg.train.lambda_a = v;
        }
        if let Some(v) = self.lambda_r {
            cfg.train.lambda_r = v;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(w) = self.width {
            cfg.model.width = w;
            cfg.model.modality_widths = vec![w; cfg.data.modalities];
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(b) = &self.branch {
            cfg.train.branch = match b.as_str() {
                "entropy" => InferenceMode::Entropy,
                "global" => InferenceMode::Global,
                other => return Err(Error::Config(format!("unknown branch '{other}'"))),
            };
        }
        Ok(())
    }

    pub fn effective_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        self.apply(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Output directory for the three split files and the manifest.
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Directory holding train.ndjson and val.ndjson.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and the metric log.
    #[arg(long, default_value = "runs/default")]
    pub out: PathBuf,
    /// Resume from a checkpoint written by an earlier run of the same
    /// config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Dataset file, or a directory containing test.ndjson.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub ckpt: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reduced trial counts for a quick pass.
    #[arg(long)]
    pub fast: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Evaluations per configuration for wall-time measurement.
    #[arg(long, default_value_t = 2000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Run a parsed command; the returned code is the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Generate(args) => cmd_generate(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Selftest(args) => cmd_selftest(&args),
        Command::Bench(args) => cmd_bench(&args),
    }
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<i32> {
    let cfg = args.overrides.effective_config()?;
    std::fs::create_dir_all(&args.out)?;
    let mut manifest = serde_json::Map::new();
    manifest.insert("config".into(), serde_json::to_value(&cfg)?);
    manifest.insert("config_hash".into(), cfg.hash().into());
    let mut files = serde_json::Map::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let gen_cfg = cfg.gen_config(split);
        let (cases, _) = generate(&gen_cfg)?;
        let path = args.out.join(split.file_name());
        write_dataset(&path, &cases)?;
        files.insert(
            split.file_name().into(),
            serde_json::json!({
                "cases": cases.len(),
                "generator": serde_json::to_value(&gen_cfg)?,
            }),
        );
        println!("wrote {} ({} cases)", path.display(), cases.len());
    }
    manifest.insert("files".into(), serde_json::Value::Object(files));
    let manifest_path = args.out.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&serde_json::Value::Object(manifest))?,
    )?;
    println!("wrote {}", manifest_path.display());
    Ok(0)
}

fn load_split(dir_or_file: &Path, split: Split, cfg: &RunConfig) -> Result<Dataset> {
    let path = if dir_or_file.is_dir() {
        dir_or_file.join(split.file_name())
    } else {
        dir_or_file.to_path_buf()
    };
    ingest(&path, &cfg.data_config())
}

pub fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let cfg = args.overrides.effective_config()?;
    let train_set = load_split(&args.data, Split::Train, &cfg)?;
    let val_set = load_split(&args.data, Split::Val, &cfg)?;
    std::fs::create_dir_all(&args.out)?;
    // The effective configuration is part of the run log.
    std::fs::write(
        args.out.join("run_config.json"),
        serde_json::to_string_pretty(&cfg)?,
    )?;
    let mut store = ParamStore::new();
    let model = Model::seeded(&mut store, cfg.model_config(), cfg.train.seed)?;
    let hash = cfg.hash();
    let session = TrainSession {
        train: &train_set,
        val: &val_set,
        out_dir: &args.out,
        config_hash: &hash,
        resume: args.resume.as_deref(),
        verbose: !args.quiet,
    };
    let outcome = train(&mut store, &model, &cfg.train_config(), &session)?;
    println!(
        "best epoch {} (val auroc {:.4}); checkpoints in {}",
        outcome.best_epoch,
        outcome.best_auroc,
        args.out.display()
    );
    Ok(0)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let cfg = args.overrides.effective_config()?;
    let dataset = load_split(&args.data, Split::Test, &cfg)?;
    let mut store = ParamStore::new();
    let model = Model::seeded(&mut store, cfg.model_config(), cfg.train.seed)?;
    let (ckpt_hash, _, epoch) = load_checkpoint(&args.ckpt, &mut store, None)?;
    if ckpt_hash != cfg.hash() {
        eprintln!(
            "note: checkpoint config hash {} differs from effective config {}",
            &ckpt_hash[..12.min(ckpt_hash.len())],
            &cfg.hash()[..12]
        );
    }
    let (probs, labels) = evaluate(&store, &model, &dataset, &cfg.train_config())?;
    let m = metrics::compute(&probs, &labels)?;
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": args.ckpt.display().to_string(),
            "checkpoint_epoch": epoch,
            "cases": labels.len(),
            "branch": match cfg.train.branch {
                InferenceMode::Entropy => "entropy",
                InferenceMode::Global => "global",
            },
            "auroc": m.auroc,
            "auprc": m.auprc,
            "f1": m.f1,
        })
    );
    Ok(0)
}

pub fn cmd_selftest(args: &SelftestArgs) -> Result<i32> {
    let opts = if args.fast {
        selftest::SelftestOptions {
            oracle_trials: 20,
            neighborhood_batches: 10,
            seed: args.seed,
        }
    } else {
        selftest::SelftestOptions {
            seed: args.seed,
            ..Default::default()
        }
    };
    let report = selftest::run(&opts);
    for c in &report.checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    Ok(if report.passed() { 0 } else { 1 })
}

pub fn cmd_bench(args: &BenchArgs) -> Result<i32> {
    let rows = bench::run_sweep(args.pairs, args.seed)?;
    print!("{}", bench::format_table(&rows));
    let (slope, intercept, r2) = bench::coupled_linear_fit(&rows);
    println!("coupled fit: flops ~ {slope:.3} * (rank*width*dims) + {intercept:.1}, r^2 = {r2:.5}");
    let ratios = bench::oracle_growth_ratios(&rows);
    for (width, rank, ratio) in &ratios {
        println!(
            "oracle growth |D|=3 -> 4 at width {width}, rank {rank}: {ratio:.3} (width = {width})"
        );
    }
    let linear_ok = r2 >= 0.98;
    let growth_ok = ratios
        .iter()
        .all(|(w, _, r)| (r / *w as f64 - 1.0).abs() <= 0.1);
    let doubling_ok = bench::rank_doubling_exact(&rows);
    println!(
        "linearity {}  width-growth {}  rank-doubling {}",
        if linear_ok { "PASS" } else { "FAIL" },
        if growth_ok { "PASS" } else { "FAIL" },
        if doubling_ok { "PASS" } else { "FAIL" }
    );
    Ok(if linear_ok && growth_ok && doubling_ok { 0 } else { 1 })
}
