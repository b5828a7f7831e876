//! End-to-end pipeline checks on small synthetic batches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use clinpoint::data::EventBatch;
use clinpoint::gradcheck::{grad_check, GradCheckConfig};
use clinpoint::hierarchy::{build_neighborhoods, forward, level_specs, LevelRule, ModelConfig};
use clinpoint::params::ParamStore;
use clinpoint::synth::{generate, GenConfig, TaskKind};
use clinpoint::tape::Tape;
use clinpoint::train::{batch_loss, Model, TrainConfig};

fn tiny_model_config() -> ModelConfig {
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

fn tiny_gen_config(cases: usize, seed: u64) -> GenConfig {
    GenConfig {
        cases,
        modalities: 2,
        feature_dims: vec![3, 4],
        horizon: 48.0,
        event_rates: vec![0.12, 0.08],
        modality_missing_rate: 0.4,
        label_missing_rate: 0.25,
        task: TaskKind::Separable,
        noise_std: 0.2,
        seed,
        projection_seed: 0,
    }
}

fn tiny_batch(cases: usize, seed: u64) -> EventBatch {
    let (records, _) = generate(&tiny_gen_config(cases, seed)).unwrap();
    EventBatch::from_cases(&records, 2, 48.0).unwrap()
}

#[test]
fn forward_token_counts_match_closed_form() {
    let cfg = tiny_model_config();
    let mut store = ParamStore::new();
    let model = Model::seeded(&mut store, cfg.clone(), 7).unwrap();
    // fully observed batch
    let gen = GenConfig {
        modality_missing_rate: 0.0,
        label_missing_rate: 0.0,
        ..tiny_gen_config(2, 3)
    };
    let (records, _) = generate(&gen).unwrap();
    let batch = EventBatch::from_cases(&records, 2, 48.0).unwrap();
    let mut tape = Tape::new();
    let out = forward(&mut tape, &store, &model.hierarchy, &batch).unwrap();
    let g1: usize = cfg
        .grid1
        .iter()
        .map(|dt| (48.0 / dt).floor() as usize + 1)
        .sum();
    let g3: usize = cfg
        .grid3
        .iter()
        .map(|dt| (48.0 / dt).floor() as usize + 1)
        .sum();
    let cases = 2;
    assert_eq!(out.h2.len(), cases * g1);
    assert_eq!(out.h3.len(), cases * g1);
    assert_eq!(out.h4_in.len(), cases * g3);
    assert_eq!(out.h4.len(), cases * g3);
    assert_eq!(out.h5.len(), cases * g3);
    assert_eq!(tape.value(out.recon).shape(), &[cases * g3, cfg.width]);
    out.h2.validate().unwrap();
    out.h4_in.validate().unwrap();
    out.h5.validate().unwrap();
}

#[test]
fn degenerate_single_case_single_modality() {
    // One case, one modality, one event: the pipeline completes and the
    // fusion output has |grid3| tokens for that modality.
    let cfg = ModelConfig {
        modalities: 1,
        feature_dims: vec![3],
        modality_widths: vec![4],
        width: 4,
        rank: 1,
        heads: 1,
        ffn_multiplier: 2,
        delta: 2.0,
        k_max: 6,
        grid1: vec![24.0],
        grid3: vec![48.0],
        horizon: 48.0,
        pre_norm: true,
    };
    let mut store = ParamStore::new();
    let model = Model::seeded(&mut store, cfg, 1).unwrap();
    let records = vec![clinpoint::data::CaseRecord {
        case_id: 0,
        events: vec![clinpoint::data::ClinicalEvent {
            content: vec![0.1, -0.2, 0.3],
            timestamp: 5.0,
            modality: 0,
            case_id: 0,
        }],
        label: 1,
        label_observed: true,
    }];
    let batch = EventBatch::from_cases(&records, 1, 48.0).unwrap();
    let mut tape = Tape::new();
    let out = forward(&mut tape, &store, &model.hierarchy, &batch).unwrap();
    assert_eq!(out.h5.len(), 2); // grid3 = {0, 48}
    // cross-modality neighborhoods degenerate to self
    let n3 = build_neighborhoods(&out.h2, &LevelRule::CrossModality);
    for i in 0..out.h2.len() {
        assert_eq!(n3.neighbors(i), &[i as u32]);
    }
}

#[test]
fn eval_forward_is_deterministic() {
    let cfg = tiny_model_config();
    let mut store = ParamStore::new();
    let model = Model::seeded(&mut store, cfg, 5).unwrap();
    let batch = tiny_batch(3, 11);
    let run = |store: &ParamStore| -> Vec<u64> {
        let mut tape = Tape::new();
        let out = forward(&mut tape, store, &model.hierarchy, &batch).unwrap();
        tape.value(out.h5.tokens)
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect()
    };
    assert_eq!(run(&store), run(&store));
}

#[test]
fn neighborhoods_match_bruteforce_scan() {
    let cfg = tiny_model_config();
    let mut store = ParamStore::new();
    let model = Model::seeded(&mut store, cfg.clone(), 9).unwrap();
    for seed in 0..6u64 {
        let batch = tiny_batch(4, 100 + seed);
        let mut tape = Tape::new();
        let out = forward(&mut tape, &store, &model.hierarchy, &batch).unwrap();
        let specs = level_specs(cfg.delta, cfg.k_max);
        // level-2..5 rules on their actual input clouds
        for (cloud, spec) in [
            (&out.h2, &specs[1]),
            (&out.h2, &specs[2]),
            (&out.h4_in, &specs[3]),
            (&out.h4_updated, &specs[4]),
        ] {
            let nbrs = build_neighborhoods(cloud, &spec.rule);
            for i in 0..cloud.len() {
                let expect =
                    clinpoint::selftest::bruteforce_neighbors(cloud, &spec.rule, i);
                assert_eq!(
                    nbrs.neighbors(i),
                    expect.as_slice(),
                    "level {} token {i} seed {seed}",
                    spec.level
                );
            }
        }
    }
}

#[test]
fn full_gradient_check_on_total_loss() {
    // Every parameter group of the full pipeline against central
    // differences on a 4-case, 2-modality batch.
    let cfg = tiny_model_config();
    let mut store = ParamStore::new();
    let model = Model::seeded(&mut store, cfg, 13).unwrap();
    let batch = tiny_batch(4, 21);
    // The symmetric reconstruction switch keeps the finite-difference
    // route measuring the same function the tape differentiates.
    let tcfg = TrainConfig {
        tau: 0.5,
        detach_recon_target: false,
        ..Default::default()
    };
    let report = grad_check(
        &mut store,
        |store, tape| {
            let (loss, _) = batch_loss(tape, store, &model, &batch, &tcfg)?;
            Ok(loss)
        },
        &GradCheckConfig {
            coords_per_param: 3,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(
        report.passed,
        "worst offenders: {:#?}",
        report.worst_offenders(5)
    );
}

#[test]
fn label_mask_discipline_is_bitwise() {
    // Perturbing labels of unlabeled cases changes no loss value and no
    // gradient, bitwise.
    let cfg = tiny_model_config();
    let mut store = ParamStore::new();
    let model = Model::seeded(&mut store, cfg, 17).unwrap();
    let mut batch = (33..64u64)
        .map(|s| tiny_batch(4, s))
        .find(|b| b.label_mask.iter().any(|&l| !l) && b.label_mask.iter().any(|&l| l))
        .expect("fixture with mixed label mask");
    let unlabeled: Vec<usize> = (0..batch.case_count())
        .filter(|&c| !batch.label_mask[c])
        .collect();
    let tcfg = TrainConfig::default();
    let run = |store: &mut ParamStore, batch: &EventBatch| -> (u64, Vec<u64>) {
        store.zero_grads();
        let mut tape = Tape::new();
        let (loss, _) = batch_loss(&mut tape, store, &model, batch, &tcfg).unwrap();
        tape.backward(loss).unwrap();
        tape.accumulate_grads(store);
        let bits = tape.value(loss).item().to_bits();
        let mut grads = Vec::new();
        for id in 0..store.len() {
            grads.extend(store.grad(id).data().iter().map(|g| g.to_bits()));
        }
        (bits, grads)
    };
    let (l1, g1) = run(&mut store, &batch);
    for &c in &unlabeled {
        batch.labels[c] ^= 1;
    }
    let (l2, g2) = run(&mut store, &batch);
    assert_eq!(l1, l2);
    assert_eq!(g1, g2);
}
