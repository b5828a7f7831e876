//! Seeded generator of incomplete multimodal event streams.
//!
//! Each case carries a smooth latent trajectory observed through
//! per-modality channels at exponentially spaced (hence irregular)
//! timestamps. Outcomes are deterministic functions of the latent state, so
//! an oracle with access to the latent separates the classes perfectly.
//! Two task flavors:
//!
//! - `separable`: a shared latent trend drives every channel; the label is
//!   the trend's sign, so any observed modality carries the signal.
//! - `coupled`: the label is the sign of the product of channel values at a
//!   shared event time; each modality observes only its own channel, so no
//!   single modality carries any signal and the classes separate only
//!   through a cross-modal product.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CaseRecord, ClinicalEvent};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Separable,
    Coupled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    pub cases: usize,
    pub modalities: usize,
    pub feature_dims: Vec<usize>,
    pub horizon: f64,
    /// Mean events per hour per modality (exponential inter-arrivals).
    pub event_rates: Vec<f64>,
    /// Fraction of cases with at least one modality dropped; at least one
    /// modality always stays observed.
    pub modality_missing_rate: f64,
    /// Fraction of cases without a label.
    pub label_missing_rate: f64,
    pub task: TaskKind,
    pub noise_std: f64,
    /// Drives case sampling; splits of one dataset use distinct values.
    pub seed: u64,
    /// Drives the dataset-level observation coefficients; all splits of one
    /// dataset must share it so features mean the same thing everywhere.
    #[serde(default)]
    pub projection_seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            cases: 100,
            modalities: 2,
            feature_dims: vec![5, 5],
            horizon: 48.0,
            event_rates: vec![0.5, 0.15],
            modality_missing_rate: 0.53,
            label_missing_rate: 0.5,
            task: TaskKind::Separable,
            noise_std: 0.2,
            seed: 0,
            projection_seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.modalities;
        if m == 0 || self.feature_dims.len() != m || self.event_rates.len() != m {
            return Err(Error::Config(format!(
                "per-modality generator settings must have length {m}"
            )));
        }
        for r in [self.modality_missing_rate, self.label_missing_rate] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("rate {r} outside [0, 1]")));
            }
        }
        if matches!(self.task, TaskKind::Coupled) && m < 2 {
            return Err(Error::Config("coupled task needs at least 2 modalities".into()));
        }
        Ok(())
    }
}

/// Per-case latent state: a shared amplitude envelope, per-channel
/// oscillations, and (for the separable task) a shared trend. The outcome
/// is a deterministic function of this state.
#[derive(Debug, Clone)]
pub struct LatentTrajectory {
    pub amplitude: f64,
    pub omega: Vec<f64>,
    pub phase: Vec<f64>,
    pub trend: f64,
    pub task: TaskKind,
    pub horizon: f64,
    /// Deterministic functional whose sign is the label.
    pub score: f64,
    pub label: u8,
}

impl LatentTrajectory {
    /// Channel value at time `t` (hours).
    pub fn channel(&self, ch: usize, t: f64) -> f64 {
        let osc = self.amplitude * (self.omega[ch] * t + self.phase[ch]).sin();
        match self.task {
            TaskKind::Separable => osc + self.trend * (t / self.horizon),
            TaskKind::Coupled => osc,
        }
    }
}

/// The coupled outcome: 1 iff the two channel values agree in sign.
/// Flipping both signs leaves the label unchanged.
pub fn coupled_label(v0: f64, v1: f64) -> u8 {
    u8::from(v0 * v1 > 0.0)
}

fn case_rng(seed: u64, index: u64, stream: u8) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    key[16] = stream;
    ChaCha8Rng::from_seed(key)
}

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Dataset-level observation coefficients: each modality feature is
/// `a * z + b * tanh(z) + c` plus noise, with (a, b, c) fixed per dataset.
struct ObservationMap {
    coef: Vec<Vec<(f64, f64, f64)>>,
}

impl ObservationMap {
    fn new(cfg: &GenConfig) -> Self {
        let mut rng = case_rng(cfg.projection_seed, u64::MAX, 255);
        let coef = cfg
            .feature_dims
            .iter()
            .map(|&dim| {
                (0..dim)
                    .map(|_| {
                        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                        (
                            sign * rng.gen_range(0.5..1.5),
                            rng.gen_range(0.0..1.0),
                            rng.gen_range(-0.5..0.5),
                        )
                    })
                    .collect()
            })
            .collect();
        ObservationMap { coef }
    }

    fn observe(&self, m: usize, z: f64, noise_std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.coef[m]
            .iter()
            .map(|&(a, b, c)| a * z + b * z.tanh() + c + normal(rng, noise_std))
            .collect()
    }
}

/// Generate one split. Bit-identical for identical configs.
pub fn generate(cfg: &GenConfig) -> Result<(Vec<CaseRecord>, Vec<LatentTrajectory>)> {
    cfg.validate()?;
    let map = ObservationMap::new(cfg);
    let mut cases = Vec::with_capacity(cfg.cases);
    let mut latents = Vec::with_capacity(cfg.cases);
    for idx in 0..cfg.cases {
        let mut rng = case_rng(cfg.seed, idx as u64, 0);
        let amplitude = rng.gen_range(0.6..1.4);
        let omega: Vec<f64> = (0..cfg.modalities)
            .map(|_| rng.gen_range(0.08..0.25))
            .collect();
        let phase: Vec<f64> = (0..cfg.modalities)
            .map(|_| rng.gen_range(0.0..2.0 * std::f64::consts::PI))
            .collect();
        let trend = normal(&mut rng, 1.0);
        let mut latent = LatentTrajectory {
            amplitude,
            omega,
            phase,
            trend,
            task: cfg.task,
            horizon: cfg.horizon,
            score: 0.0,
            label: 0,
        };
        match cfg.task {
            TaskKind::Separable => {
                latent.score = trend;
                latent.label = u8::from(trend > 0.0);
            }
            TaskKind::Coupled => {
                let t_star = cfg.horizon / 2.0;
                let v0 = latent.channel(0, t_star);
                let v1 = latent.channel(1, t_star);
                latent.score = v0 * v1;
                latent.label = coupled_label(v0, v1);
            }
        }

        // Modality availability: with probability p the case is incomplete
        // and drops a uniformly chosen nonempty proper subset.
        let mut observed = vec![true; cfg.modalities];
        if cfg.modalities > 1 && rng.gen_bool(cfg.modality_missing_rate) {
            let drop_count = rng.gen_range(1..cfg.modalities);
            let mut pool: Vec<usize> = (0..cfg.modalities).collect();
            for _ in 0..drop_count {
                let k = rng.gen_range(0..pool.len());
                observed[pool.swap_remove(k)] = false;
            }
        }
        let label_observed = !rng.gen_bool(cfg.label_missing_rate);

        let mut events = Vec::new();
        for (m, &obs) in observed.iter().enumerate() {
            if !obs {
                continue;
            }
            let mut ev_rng = case_rng(cfg.seed, idx as u64, 1 + m as u8);
            let rate = cfg.event_rates[m];
            let mut t = -(1.0 - ev_rng.gen_range(0.0..1.0f64)).ln() / rate;
            let mut times = Vec::new();
            while t <= cfg.horizon {
                times.push(t);
                t += -(1.0 - ev_rng.gen_range(0.0..1.0f64)).ln() / rate;
            }
            if times.is_empty() {
                times.push(ev_rng.gen_range(0.0..1.0) * cfg.horizon);
            }
            for t in times {
                let z = latent.channel(m, t);
                events.push(ClinicalEvent {
                    content: map.observe(m, z, cfg.noise_std, &mut ev_rng),
                    timestamp: t,
                    modality: m,
                    case_id: idx as u64,
                });
            }
        }
        events.sort_by(|a, b| {
            (a.modality, a.timestamp.to_bits()).cmp(&(b.modality, b.timestamp.to_bits()))
        });
        cases.push(CaseRecord {
            case_id: idx as u64,
            events,
            label: latent.label,
            label_observed,
        });
        latents.push(latent);
    }
    Ok((cases, latents))
}

/// The multiplicative cross-modal task (requires two or more modalities).
pub fn coupled_task(cfg: &GenConfig) -> Result<(Vec<CaseRecord>, Vec<LatentTrajectory>)> {
    let mut cfg = cfg.clone();
    cfg.task = TaskKind::Coupled;
    generate(&cfg)
}
