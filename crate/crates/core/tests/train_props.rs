use std::collections::BTreeSet;

use wsi_core::augment::AugmentConfig;
use wsi_core::corpus::{generate_corpus, Utterance};
use wsi_core::dsp::{DftPower, FeatureConfig, Featurizer};
use wsi_core::losses::LossConfig;
use wsi_core::model::{is_trainable, ModelConfig, ModelParams, POSITIONS};
use wsi_core::par::Sequential;
use wsi_core::train::{make_batches, CheckStatus, GradCheckConfig, TrainConfig, TrainState, Trainer};

fn small_train() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        speakers_per_batch: 4,
        utts_per_speaker: 2,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    }
}

fn corpus(speakers: usize, utts: usize) -> Vec<Utterance> {
    generate_corpus(1, speakers, utts, 1.0).unwrap().utterances
}

fn micro_featurizer() -> Featurizer<DftPower> {
    Featurizer::with_dft(FeatureConfig::micro()).unwrap()
}

#[test]
fn batches_are_p_by_k_without_repeats() {
    let utts = corpus(7, 5);
    let cfg = TrainConfig::default();
    for epoch in 1..4 {
        let batches = make_batches(&utts, &cfg, epoch).unwrap();
        assert!(!batches.is_empty());
        let mut used = BTreeSet::new();
        for b in &batches {
            assert_eq!(b.items.len(), 16);
            let labels: BTreeSet<u32> = b.labels().into_iter().collect();
            assert_eq!(labels.len(), 4);
            for l in &labels {
                assert_eq!(b.labels().iter().filter(|x| *x == l).count(), 4);
            }
            for it in &b.items {
                assert_eq!(utts[it.index].key(), it.key);
                assert_eq!(it.label, it.key.speaker_id);
                assert!(used.insert(it.index), "utterance {} repeated in epoch {epoch}", it.index);
            }
        }
        assert_eq!(batches, make_batches(&utts, &cfg, epoch).unwrap());
    }
    assert_ne!(make_batches(&utts, &cfg, 1).unwrap(), make_batches(&utts, &cfg, 2).unwrap());
}

#[test]
fn two_by_two_corpus_gives_one_batch() {
    let utts = corpus(2, 2);
    let cfg = TrainConfig {
        batch_size: 4,
        speakers_per_batch: 2,
        utts_per_speaker: 2,
        ..TrainConfig::default()
    };
    let b = make_batches(&utts, &cfg, 1).unwrap();
    assert_eq!(b.len(), 1);
    let idx: BTreeSet<usize> = b[0].items.iter().map(|i| i.index).collect();
    assert_eq!(idx, (0..4).collect());
}

#[test]
fn infeasible_sampler_is_a_config_error() {
    let utts = corpus(3, 3);
    assert!(make_batches(&utts, &TrainConfig::default(), 1).is_err());
    let bad = TrainConfig {
        batch_size: 10,
        ..TrainConfig::default()
    };
    assert!(make_batches(&utts, &bad, 1).is_err());
}

#[test]
fn zero_learning_rate_freezes_params_but_moves_moments() {
    let utts = corpus(4, 2);
    let f = micro_featurizer();
    let train = TrainConfig {
        learning_rate: 0.0,
        ..small_train()
    };
    let t = Trainer::new(&f, AugmentConfig::default(), LossConfig::default(), train, &Sequential).unwrap();
    let mut p = ModelParams::init(ModelConfig::micro(), 3).unwrap();
    let before = p.clone();
    let mut s = TrainState::new(&p);
    let batch = make_batches(&utts, &train, 1).unwrap().remove(0);
    t.step(&mut p, &mut s, &utts, &batch, 1).unwrap();
    for ((name, a), (_, b)) in before.tensors().iter().zip(p.tensors()) {
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()), "{name}");
    }
    assert_eq!(s.step, 1);
    let moved = s.m.tensors().iter().filter(|(_, m)| m.data.iter().any(|&x| x != 0.0)).count();
    assert!(moved > 0);
    assert!(s.v.tensors().iter().any(|(_, v)| v.data.iter().any(|&x| x > 0.0)));
}

#[test]
fn one_step_descends_in_at_least_95_of_100_trials() {
    let utts = corpus(8, 4);
    let f = micro_featurizer();
    let train = small_train();
    let t = Trainer::new(&f, AugmentConfig::default(), LossConfig::default(), train, &Sequential).unwrap();
    let batches = make_batches(&utts, &train, 1).unwrap();
    let mut descended = 0;
    for trial in 0..100u64 {
        let mut p = ModelParams::init(ModelConfig::micro(), 1000 + trial).unwrap();
        let mut s = TrainState::new(&p);
        let batch = &batches[trial as usize % batches.len()];
        let views = t.prepare(&utts, batch, 1, trial + 1).unwrap();
        let (before, grads) = t.gradients(&p, &views).unwrap();
        t.apply(&mut p, &mut s, &grads).unwrap();
        let after = t.loss(&p, &views).unwrap();
        if after.total < before.total {
            descended += 1;
        }
    }
    assert!(descended >= 95, "loss fell in only {descended} of 100 trials");
}

#[test]
fn ablated_run_logs_total_equal_to_triplet() {
    let utts = corpus(4, 4);
    let f = micro_featurizer();
    let train = small_train();
    let loss = LossConfig {
        ssl_weight: 0.0,
        ..LossConfig::default()
    };
    let t = Trainer::new(&f, AugmentConfig::default(), loss, train, &Sequential).unwrap();
    let mut p = ModelParams::init(ModelConfig::micro(), 4).unwrap();
    let mut s = TrainState::new(&p);
    t.run_epoch(&mut p, &mut s, &utts, &mut |_| {}).unwrap();
    assert_eq!(s.history.len(), 2);
    for r in &s.history {
        assert_eq!(r.total, r.triplet);
        assert!(r.ntxent > 0.0);
        let line = r.log_line();
        assert!(line.starts_with(&format!("step={} epoch=1 total=", r.step)), "{line}");
    }
}

#[test]
fn only_trainable_tensors_move_and_positions_stay_fixed() {
    let utts = corpus(4, 2);
    let f = micro_featurizer();
    let train = small_train();
    let t = Trainer::new(&f, AugmentConfig::default(), LossConfig::default(), train, &Sequential).unwrap();
    let mut p = ModelParams::init(ModelConfig::micro(), 5).unwrap();
    let before = p.clone();
    let mut s = TrainState::new(&p);
    t.run_epoch(&mut p, &mut s, &utts, &mut |_| {}).unwrap();
    for ((name, a), (_, b)) in before.tensors().iter().zip(p.tensors()) {
        if is_trainable(name) {
            assert_ne!(a.data, b.data, "{name} did not move");
        } else {
            assert_eq!(name, POSITIONS);
            assert_eq!(a.data, b.data);
        }
        assert!(b.is_finite());
    }
    for (_, m) in s.m.tensors() {
        assert!(m.is_finite());
    }
}

#[test]
fn training_replays_exactly() {
    let utts = corpus(4, 4);
    let f = micro_featurizer();
    let train = small_train();
    let run = || {
        let t = Trainer::new(&f, AugmentConfig::default(), LossConfig::default(), train, &Sequential).unwrap();
        let mut p = ModelParams::init(ModelConfig::micro(), 6).unwrap();
        let mut s = TrainState::new(&p);
        for _ in 0..2 {
            t.run_epoch(&mut p, &mut s, &utts, &mut |_| {}).unwrap();
        }
        (p, s.history)
    };
    let (pa, ha) = run();
    let (pb, hb) = run();
    assert_eq!(ha.len(), 4);
    assert_eq!(pa, pb);
    let bits = |h: &[wsi_core::train::LossRecord]| h.iter().map(|r| r.total.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&ha), bits(&hb));
}

/// A reduced model briefly trained so that some batch clears the hinge
/// and mining boundaries.
fn tiny_setup(train: TrainConfig) -> (Featurizer<DftPower>, ModelParams, Vec<Utterance>) {
    let feats = FeatureConfig {
        n_mels: 16,
        fixed_frames: 40,
        ..FeatureConfig::default()
    };
    let model = ModelConfig {
        n_mels: 16,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        ffn_mult: 2,
        proj_hidden: 8,
        embed_dim: 8,
        max_frames: 20,
    };
    let f = Featurizer::with_dft(feats).unwrap();
    let utts = generate_corpus(2, 8, 4, 0.4).unwrap().utterances;
    let mut p = ModelParams::init(model, 1).unwrap();
    let warm = TrainConfig {
        learning_rate: 1e-2,
        ..train
    };
    let t = Trainer::new(&f, AugmentConfig::default(), LossConfig::default(), warm, &Sequential).unwrap();
    let mut s = TrainState::new(&p);
    for _ in 0..WARMUP {
        t.run_epoch(&mut p, &mut s, &utts, &mut |_| {}).unwrap();
    }
    (f, p, utts)
}

const WARMUP: usize = 8;

#[test]
fn grad_check_passes_skips_positions_and_catches_a_negated_tensor() {
    let train = small_train();
    let (f, p, utts) = tiny_setup(train);
    let t = Trainer::new(&f, AugmentConfig::default(), LossConfig::default(), train, &Sequential).unwrap();
    let cfg = GradCheckConfig::default();
    let report = t.grad_check(&p, &utts, &cfg).unwrap();
    assert!(report.passed, "{:#?}", report.tensors.iter().filter(|c| !c.passed(report.tolerance)).collect::<Vec<_>>());
    assert!(report.boundary_clearance >= cfg.boundary);
    let names: Vec<&str> = report.tensors.iter().map(|c| c.name.as_str()).collect();
    let expected: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, expected);
    for c in &report.tensors {
        if c.name == POSITIONS {
            assert_eq!(c.status, CheckStatus::Skipped);
        } else {
            assert_eq!(c.status, CheckStatus::Checked);
            assert!(c.n_coords >= 8.min(p.tensor(&c.name).unwrap().len()), "{}", c.name);
        }
    }

    let target = "encoder.layers.0.fc1.weight";
    let faulty = t
        .grad_check(
            &p,
            &utts,
            &GradCheckConfig {
                negate_tensor: Some(target.into()),
                ..cfg
            },
        )
        .unwrap();
    assert!(!faulty.passed);
    let failing: Vec<&str> = faulty
        .tensors
        .iter()
        .filter(|c| !c.passed(faulty.tolerance))
        .map(|c| c.name.as_str())
        .collect();
    assert_eq!(failing, vec![target]);
}
