mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectrack::activation_io::{write_stream, Label};
use spectrack::eval::{auroc, score_sequences, shapley_attribution, triplet_ablation};
use spectrack::pipeline::{
    extract_stream, fit_classifier, FeatureStep, LabeledSequence, PipelineConfig, Pooling,
};
use spectrack::recurrent::{
    fit_normalizer, train, CellKind, LossMode, RecurrentModel, TrainConfig, TrainSequence,
};
use spectrack::spectral::FEATURE_COUNT;
use spectrack::synthetic::{gen_stream, Split, SynthSpec};

fn toy_sequence(rng: &mut ChaCha8Rng, positive: bool, k: usize, t: usize) -> TrainSequence {
    let shift = if positive { 1.5 } else { -1.5 };
    TrainSequence {
        features: (0..t)
            .map(|_| {
                (0..k)
                    .map(|i| rng.random_range(-1.0..1.0) + if i == 0 { shift } else { 0.0 })
                    .collect()
            })
            .collect(),
        labels: vec![f64::from(u8::from(positive)); t],
        warmup: 0,
    }
}

fn toy_data(seed: u64, n: usize) -> Vec<TrainSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| toy_sequence(&mut rng, i % 2 == 0, 4, 6))
        .collect()
}

fn fit_toy(cell: CellKind, data: &[TrainSequence]) -> RecurrentModel {
    let mut m = RecurrentModel::new(cell, 4, 8, 1);
    fit_normalizer(&mut m, data);
    let cfg = TrainConfig {
        epochs: 20,
        learning_rate: 1e-2,
        batch_size: 8,
        seed: 2,
        ..TrainConfig::default()
    };
    train(&mut m, data, &cfg).unwrap();
    m
}

#[test]
fn every_cell_learns_a_separable_rule() {
    let train_set = toy_data(1, 80);
    let test_set = toy_data(2, 40);
    for cell in CellKind::ALL {
        let m = fit_toy(cell, &train_set);
        let scores: Vec<f64> = test_set
            .iter()
            .map(|s| *m.forward_sequence(&s.features).unwrap().last().unwrap())
            .collect();
        let labels: Vec<bool> = test_set.iter().map(|s| s.labels[0] == 1.0).collect();
        let a = auroc(&scores, &labels).unwrap();
        assert!(a > 0.97, "{cell}: {a}");
    }
}

#[test]
fn training_does_not_depend_on_thread_count() {
    let data = toy_data(3, 48);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fit_toy(CellKind::Lstm, &data))
    };
    let one = run(1);
    assert_eq!(one.params, run(4).params);
    assert_eq!(one.params, fit_toy(CellKind::Lstm, &data).params);
}

#[test]
fn logits_depend_only_on_the_past() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for cell in CellKind::ALL {
        let m = RecurrentModel::new(cell, 5, 6, 9);
        let xs: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let base = m.forward_sequence(&xs).unwrap();
        for cut in 1..10 {
            let mut changed = xs.clone();
            for row in &mut changed[cut..] {
                row.iter_mut().for_each(|v| *v += 3.0);
            }
            let after = m.forward_sequence(&changed).unwrap();
            assert_eq!(base[..cut], after[..cut]);
            assert_ne!(base[cut], after[cut]);
        }
    }
}

#[test]
fn feature_steps_depend_only_on_the_past() {
    let cfg = PipelineConfig::with_window(8);
    let s = gen_stream(&SynthSpec::isotropic(40, 5, 1)).unwrap();
    let encode = |frames: &[spectrack::activation_io::ActivationFrame]| {
        let mut buf = Vec::new();
        write_stream(&s.header.clone().with_token_count(0), frames, &mut buf).unwrap();
        extract_stream(&buf[..], &cfg).unwrap()
    };
    let base = encode(&s.frames);
    let mut altered = s.frames.clone();
    for f in &mut altered[25..] {
        f.values.iter_mut().for_each(|v| *v *= -4.0);
    }
    let after = encode(&altered);
    assert_eq!(base.len(), after.len());
    assert_eq!(base[..25], after[..25]);
    assert_ne!(base[25], after[25]);
}

fn constant_sequence(id: usize, label: Label) -> LabeledSequence {
    LabeledSequence {
        sequence_id: format!("c{id:03}"),
        split: Split::Train,
        label,
        onset_token: None,
        steps: (0..5)
            .map(|t| FeatureStep {
                t: t as u64,
                warm_up: false,
                features: vec![1.0; FEATURE_COUNT],
            })
            .collect(),
    }
}

#[test]
fn ablation_on_constant_features_is_chance() {
    let seqs: Vec<LabeledSequence> = (0..20)
        .map(|i| {
            constant_sequence(
                i,
                if i % 2 == 0 {
                    Label::Anomalous
                } else {
                    Label::InDistribution
                },
            )
        })
        .collect();
    let spec = common::small_spec(CellKind::Gru, 3, LossMode::FinalStep);
    let table = triplet_ablation(&seqs, &seqs, &spec, Pooling::Final, Some(6), 1).unwrap();
    assert_eq!(table.rows.len(), 6);
    for r in &table.rows {
        assert_eq!(r.auroc, 0.5);
    }
}

#[test]
fn ablation_is_reproducible_and_full_set_is_competitive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        stride: 8,
        ..PipelineConfig::with_window(16)
    };
    let (_, [train, _, test]) = common::corpus(
        dir.path(),
        200,
        &SynthSpec::isotropic(64, 8, 0),
        &SynthSpec::spiked(64, 8, vec![1.5], 0),
        &cfg,
        2,
    );
    let spec = common::small_spec(CellKind::Gru, 10, LossMode::FinalStep);
    let table = triplet_ablation(&train, &test, &spec, Pooling::Final, Some(24), 5).unwrap();
    let again = triplet_ablation(&train, &test, &spec, Pooling::Final, Some(24), 5).unwrap();
    assert_eq!(table, again);
    let (model, _) = fit_classifier(&train, &spec, None).unwrap();
    let scored = score_sequences(&model, &test, Pooling::Final).unwrap();
    let s: Vec<f64> = scored.iter().map(|x| x.score).collect();
    let l: Vec<bool> = scored.iter().map(|x| x.label == 1).collect();
    let full = auroc(&s, &l).unwrap();
    assert!(
        full >= table.best_row().auroc - 0.02,
        "full {full} vs best {}",
        table.best_row().auroc
    );
}

fn plain_sequences(k: usize, n: usize, duplicate: bool) -> Vec<LabeledSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    (0..n)
        .map(|i| LabeledSequence {
            sequence_id: format!("s{i:03}"),
            split: Split::Test,
            label: Label::InDistribution,
            onset_token: None,
            steps: (0..4)
                .map(|t| {
                    let mut f: Vec<f64> = (0..k).map(|_| rng.random_range(-1.5..1.5)).collect();
                    if duplicate {
                        f[1] = f[0];
                    }
                    FeatureStep {
                        t,
                        warm_up: false,
                        features: f,
                    }
                })
                .collect(),
        })
        .collect()
}

#[test]
fn shapley_is_efficient_symmetric_and_ignores_null_features() {
    let k = 3;
    let mut m = RecurrentModel::new(CellKind::Gru, k, 4, 8);
    let (w_in, h) = (m.layout.w_in, m.layout.hidden_dim);
    for j in 0..h {
        m.params[w_in + j * k + 1] = m.params[w_in + j * k];
        m.params[w_in + j * k + 2] = 0.0;
    }
    let seqs = plain_sequences(k, 30, true);
    let t = shapley_attribution(&m, &seqs, 400, 3, Pooling::Final).unwrap();
    let sum: f64 = t.features.iter().map(|f| f.mean).sum();
    assert!((sum - (t.full_score - t.empty_score)).abs() < 1e-12);
    assert_eq!(t.features[2].mean_abs, 0.0);
    let (a, b) = (&t.features[0], &t.features[1]);
    assert!(a.mean_abs > 1e-3 && b.mean_abs > 1e-3);
    assert!(
        (a.mean - b.mean).abs() <= 4.0 * (a.mean_stderr + b.mean_stderr),
        "{} vs {}",
        a.mean,
        b.mean
    );
}
