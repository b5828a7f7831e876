//! Run configuration: a human-editable TOML file plus flag overrides. The
//! effective config is echoed into run outputs and hashed so checkpoints
//! and logs are traceable to the exact settings that produced them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DataConfig;
use crate::error::{Error, Result};
use crate::hierarchy::ModelConfig;
use crate::synth::{GenConfig, TaskKind};
use crate::train::{InferenceMode, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub cases: usize,
    pub val_cases: usize,
    pub test_cases: usize,
    pub modalities: usize,
    pub feature_dims: Vec<usize>,
    pub horizon: f64,
    pub event_rates: Vec<f64>,
    pub modality_missing: f64,
    pub label_missing: f64,
    pub task: TaskKind,
    pub noise_std: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            cases: 2000,
            val_cases: 500,
            test_cases: 500,
            modalities: 2,
            feature_dims: vec![5, 5],
            horizon: 48.0,
            event_rates: vec![0.35, 0.12],
            modality_missing: 0.53,
            label_missing: 0.5,
            task: TaskKind::Separable,
            noise_std: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub width: usize,
    pub modality_widths: Vec<usize>,
    pub rank: usize,
    pub heads: usize,
    pub ffn_multiplier: usize,
    pub delta: f64,
    pub k_max: usize,
    pub grid1: Vec<f64>,
    pub grid3: Vec<f64>,
    pub pre_norm: bool,
    pub tau: f64,
    pub fga_excluded: Vec<usize>,
    pub detach_recon_target: bool,
    pub normalize_losses: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            width: 16,
            modality_widths: vec![16, 16],
            rank: 8,
            heads: 8,
            ffn_multiplier: 4,
            delta: 2.0,
            k_max: 6,
            grid1: vec![1.0, 4.0],
            grid3: vec![4.0, 12.0],
            pre_norm: true,
            tau: 0.1,
            fga_excluded: Vec::new(),
            detach_recon_target: true,
            normalize_losses: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub seed: u64,
    pub lambda_a: f64,
    pub lambda_r: f64,
    pub branch: InferenceMode,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 8e-4,
            weight_decay: 1e-2,
            epochs: 30,
            batch_size: 8,
            eval_batch_size: 16,
            seed: 0,
            lambda_a: 2e-3,
            lambda_r: 10.0,
            branch: InferenceMode::Entropy,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// SHA-256 over the canonical JSON rendering of the effective config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hex_string(&hasher.finalize())
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.gen_config(Split::Train).validate()?;
        if self.train.batch_size == 0 || self.train.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            modalities: self.data.modalities,
            feature_dims: self.data.feature_dims.clone(),
            modality_widths: self.model.modality_widths.clone(),
            width: self.model.width,
            rank: self.model.rank,
            heads: self.model.heads,
            ffn_multiplier: self.model.ffn_multiplier,
            delta: self.model.delta,
            k_max: self.model.k_max,
            grid1: self.model.grid1.clone(),
            grid3: self.model.grid3.clone(),
            horizon: self.data.horizon,
            pre_norm: self.model.pre_norm,
        }
    }

    /// Generator settings per split: validation and test keep full labels
    /// (missingness stresses training), with disjoint seeds per split.
    pub fn gen_config(&self, split: Split) -> GenConfig {
        let (cases, label_missing, seed_tag) = match split {
            Split::Train => (self.data.cases, self.data.label_missing, 0),
            Split::Val => (self.data.val_cases, 0.0, 1),
            Split::Test => (self.data.test_cases, 0.0, 2),
        };
        GenConfig {
            cases,
            modalities: self.data.modalities,
            feature_dims: self.data.feature_dims.clone(),
            horizon: self.data.horizon,
            event_rates: self.data.event_rates.clone(),
            modality_missing_rate: self.data.modality_missing,
            label_missing_rate: label_missing,
            task: self.data.task,
            noise_std: self.data.noise_std,
            seed: self
                .train
                .seed
                .wrapping_mul(3)
                .wrapping_add(seed_tag)
                .wrapping_add(0x9E37_79B9),
            projection_seed: self.train.seed,
        }
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            modalities: self.data.modalities,
            horizon: self.data.horizon,
            on_duplicate: crate::data::DuplicatePolicy::KeepLast,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            weight_decay: self.train.weight_decay,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            eval_batch_size: self.train.eval_batch_size,
            seed: self.train.seed,
            lambda_a: self.train.lambda_a,
            lambda_r: self.train.lambda_r,
            tau: self.model.tau,
            fga_excluded: self.model.fga_excluded.clone(),
            detach_recon_target: self.model.detach_recon_target,
            normalize_losses: self.model.normalize_losses,
            branch: self.train.branch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn file_name(&self) -> &'static str {
        match self {
            Split::Train => "train.ndjson",
            Split::Val => "val.ndjson",
            Split::Test => "test.ndjson",
        }
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
