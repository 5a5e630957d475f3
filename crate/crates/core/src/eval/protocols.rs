use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::metrics::auroc;
use super::report::{score_sequences, scores_and_labels};
use crate::error::EvalError;
use crate::pipeline::{
    extract_file, featurize, fit_classifier, pool_logits, score_sequence, ClassifierSpec, Corpus,
    CorpusEntry, LabeledSequence, PipelineConfig, Pooling,
};
use crate::recurrent::RecurrentModel;
use crate::spectral::{FEATURE_COUNT, FEATURE_NAMES};
use crate::synthetic::Split;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub window: usize,
    pub stride: usize,
    pub windows_per_sequence: f64,
    pub auroc: f64,
    /// Feature extraction plus inference, per test sequence.
    pub seconds_per_sequence: f64,
}

/// Retrains and rescores one classifier per window size. With `tumbling`
/// the stride equals the window, so shorter windows mean more windows per
/// stream. Timing is the best of `repeats` passes over the test split.
pub fn window_size_sweep(
    corpus: &Corpus,
    sizes: &[usize],
    base: &PipelineConfig,
    spec: &ClassifierSpec,
    pooling: Pooling,
    tumbling: bool,
    repeats: usize,
) -> Result<Vec<SweepRow>, EvalError> {
    if sizes.is_empty() {
        return Err(EvalError::InvalidArgument("no window sizes".into()));
    }
    let train_entries: Vec<&CorpusEntry> = corpus.split(Split::Train).collect();
    let test_entries: Vec<&CorpusEntry> = corpus.split(Split::Test).collect();
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let cfg = PipelineConfig {
            window: n,
            stride: if tumbling { n } else { base.stride },
            r_max: base.r_max,
            ..*base
        };
        let train = featurize(&train_entries, &cfg)?;
        let (model, _) = fit_classifier(&train, spec, None)?;
        let test = featurize(&test_entries, &cfg)?;
        let scored = score_sequences(&model, &test, pooling)?;
        let (s, l) = scores_and_labels(&scored);

        let mut best = f64::INFINITY;
        for _ in 0..repeats.max(1) {
            let start = Instant::now();
            for e in &test_entries {
                let steps = extract_file(&e.dump, &cfg)?;
                std::hint::black_box(score_sequence(&model, &steps, pooling)?);
            }
            best = best.min(start.elapsed().as_secs_f64());
        }
        let windows: usize = test.iter().map(|t| t.steps.len()).sum();
        rows.push(SweepRow {
            window: n,
            stride: cfg.stride,
            windows_per_sequence: windows as f64 / test.len().max(1) as f64,
            auroc: auroc(&s, &l)?,
            seconds_per_sequence: best / test_entries.len().max(1) as f64,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrefixRow {
    pub prefix: u64,
    pub auroc: f64,
    /// Sequences whose prefix holds only warm-up steps.
    pub warm_up_sequences: usize,
    pub sequences: usize,
}

/// AUROC when every sequence is scored from its first `prefix` tokens.
pub fn prefix_auroc_curve(
    model: &RecurrentModel,
    seqs: &[LabeledSequence],
    prefixes: &[u64],
    pooling: Pooling,
) -> Result<Vec<PrefixRow>, EvalError> {
    if prefixes.is_empty() || prefixes.contains(&0) {
        return Err(EvalError::InvalidArgument(
            "prefix lengths must be >= 1".into(),
        ));
    }
    prefixes
        .iter()
        .map(|&p| {
            let cut: Vec<LabeledSequence> = seqs.iter().map(|s| s.prefix(p)).collect();
            let scored = score_sequences(model, &cut, pooling)?;
            let (s, l) = scores_and_labels(&scored);
            Ok(PrefixRow {
                prefix: p,
                auroc: auroc(&s, &l)?,
                warm_up_sequences: scored.iter().filter(|x| x.warm_up_only).count(),
                sequences: scored.len(),
            })
        })
        .collect()
}

pub fn all_triplets() -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(1540);
    for a in 0..FEATURE_COUNT {
        for b in a + 1..FEATURE_COUNT {
            for c in b + 1..FEATURE_COUNT {
                out.push([a, b, c]);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripletRow {
    pub features: [usize; 3],
    pub names: [String; 3],
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    /// In evaluation order (lexicographic triplet order).
    pub rows: Vec<TripletRow>,
    pub best: usize,
    pub worst: usize,
}

impl AblationTable {
    pub fn best_row(&self) -> &TripletRow {
        &self.rows[self.best]
    }

    pub fn worst_row(&self) -> &TripletRow {
        &self.rows[self.worst]
    }

    /// Rows within `width` AUROC of the best.
    pub fn best_tier(&self, width: f64) -> Vec<&TripletRow> {
        let top = self.best_row().auroc;
        self.rows
            .iter()
            .filter(|r| r.auroc >= top - width)
            .collect()
    }
}

/// Trains one classifier per triplet with every other feature masked, and
/// scores it on `test`. `sample` picks that many triplets uniformly at
/// random instead of all 1540. Each triplet model gets its own seed drawn
/// from `seed`.
pub fn triplet_ablation(
    train: &[LabeledSequence],
    test: &[LabeledSequence],
    spec: &ClassifierSpec,
    pooling: Pooling,
    sample: Option<usize>,
    seed: u64,
) -> Result<AblationTable, EvalError> {
    let all = all_triplets();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triplets: Vec<[usize; 3]> = match sample {
        None => all,
        Some(0) => return Err(EvalError::InvalidArgument("sample must be >= 1".into())),
        Some(n) if n >= all.len() => all,
        Some(n) => {
            let mut picked = index::sample(&mut rng, all.len(), n).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| all[i]).collect()
        }
    };
    let seeds: Vec<u64> = triplets.iter().map(|_| rng.next_u64()).collect();
    let rows = triplets
        .par_iter()
        .zip(&seeds)
        .map(|(t, &s)| {
            let mut mask = vec![false; FEATURE_COUNT];
            t.iter().for_each(|&i| mask[i] = true);
            let spec = ClassifierSpec {
                seed: s,
                train: crate::recurrent::TrainConfig {
                    seed: s,
                    ..spec.train.clone()
                },
                ..spec.clone()
            };
            let (model, _) = fit_classifier(train, &spec, Some(&mask))?;
            let scored = score_sequences(&model, test, pooling)?;
            let (sc, l) = scores_and_labels(&scored);
            Ok(TripletRow {
                features: *t,
                names: t.map(|i| FEATURE_NAMES[i].to_owned()),
                auroc: auroc(&sc, &l)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let best = (0..rows.len())
        .max_by(|&a, &b| rows[a].auroc.total_cmp(&rows[b].auroc).then(b.cmp(&a)))
        .expect("at least one triplet");
    let worst = (0..rows.len())
        .min_by(|&a, &b| rows[a].auroc.total_cmp(&rows[b].auroc).then(a.cmp(&b)))
        .expect("at least one triplet");
    Ok(AblationTable { rows, best, worst })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureAttribution {
    pub slot: usize,
    pub name: String,
    /// Mean over sequences of |φ_i(x)|.
    pub mean_abs: f64,
    pub mean_abs_stderr: f64,
    /// Mean signed contribution over all sampled permutations.
    pub mean: f64,
    pub mean_stderr: f64,
    /// mean_abs divided by the total over features.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionTable {
    /// Indexed by feature slot.
    pub features: Vec<FeatureAttribution>,
    /// Slots ordered by decreasing mean_abs.
    pub ranking: Vec<usize>,
    /// Mean score with every feature absent.
    pub empty_score: f64,
    /// Mean score with every feature present.
    pub full_score: f64,
    pub permutations: usize,
}

impl AttributionTable {
    pub fn top(&self, n: usize) -> Vec<&FeatureAttribution> {
        self.ranking
            .iter()
            .take(n)
            .map(|&i| &self.features[i])
            .collect()
    }
}

/// Permutation-sampling Shapley values of the pooled score. An absent
/// feature is set to its training mean, which is zero after normalization.
pub fn shapley_attribution(
    model: &RecurrentModel,
    seqs: &[LabeledSequence],
    permutations: usize,
    seed: u64,
    pooling: Pooling,
) -> Result<AttributionTable, EvalError> {
    if permutations < 1 {
        return Err(EvalError::InvalidArgument(
            "permutations must be >= 1".into(),
        ));
    }
    if seqs.is_empty() {
        return Err(EvalError::InvalidArgument("no sequences".into()));
    }
    let k = model.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = seqs.iter().map(|_| rng.next_u64()).collect();

    struct PerSequence {
        // permutations × k marginal contributions
        samples: Vec<Vec<f64>>,
        empty: f64,
        full: f64,
    }

    let per: Vec<PerSequence> = seqs
        .par_iter()
        .zip(&seeds)
        .map(|(s, &sd)| {
            if s.steps.is_empty() {
                return Err(EvalError::InvalidArgument(format!(
                    "{}: no feature steps",
                    s.sequence_id
                )));
            }
            let z: Vec<Vec<f64>> = s
                .steps
                .iter()
                .map(|st| {
                    if st.features.len() != k {
                        return Err(EvalError::InvalidArgument("feature width".into()));
                    }
                    let mut z = vec![0.0; k];
                    model.norm.apply(&st.features, &mut z);
                    Ok(z)
                })
                .collect::<Result<_, _>>()?;
            let warm: Vec<bool> = s.steps.iter().map(|st| st.warm_up).collect();
            let value = |present: &[bool]| {
                let masked: Vec<Vec<f64>> = z
                    .iter()
                    .map(|row| {
                        row.iter()
                            .zip(present)
                            .map(|(&v, &p)| if p { v } else { 0.0 })
                            .collect()
                    })
                    .collect();
                pool_logits(&model.forward_normalized(&masked), &warm, pooling)
            };
            let empty = value(&vec![false; k]);
            let full = value(&vec![true; k]);
            let mut rng = ChaCha8Rng::seed_from_u64(sd);
            let mut order: Vec<usize> = (0..k).collect();
            let mut samples = Vec::with_capacity(permutations);
            for _ in 0..permutations {
                order.shuffle(&mut rng);
                let mut present = vec![false; k];
                let mut prev = empty;
                let mut contrib = vec![0.0; k];
                for &i in &order {
                    present[i] = true;
                    let cur = value(&present);
                    contrib[i] = cur - prev;
                    prev = cur;
                }
                samples.push(contrib);
            }
            Ok(PerSequence {
                samples,
                empty,
                full,
            })
        })
        .collect::<Result<_, EvalError>>()?;

    let n_seq = per.len() as f64;
    let stderr = |xs: &[f64]| {
        let n = xs.len() as f64;
        if xs.len() < 2 {
            return 0.0;
        }
        let m = xs.iter().sum::<f64>() / n;
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    };
    let mut features = Vec::with_capacity(k);
    for i in 0..k {
        let signed: Vec<f64> = per
            .iter()
            .flat_map(|p| p.samples.iter().map(move |c| c[i]))
            .collect();
        let abs_per_seq: Vec<f64> = per
            .iter()
            .map(|p| (p.samples.iter().map(|c| c[i]).sum::<f64>() / p.samples.len() as f64).abs())
            .collect();
        features.push(FeatureAttribution {
            slot: i,
            name: FEATURE_NAMES
                .get(i)
                .map_or_else(|| format!("f{i}"), |n| (*n).to_owned()),
            mean_abs: abs_per_seq.iter().sum::<f64>() / n_seq,
            mean_abs_stderr: stderr(&abs_per_seq),
            mean: signed.iter().sum::<f64>() / signed.len() as f64,
            mean_stderr: stderr(&signed),
            share: 0.0,
        });
    }
    let total: f64 = features.iter().map(|f| f.mean_abs).sum();
    for f in &mut features {
        f.share = if total > 0.0 { f.mean_abs / total } else { 0.0 };
    }
    let mut ranking: Vec<usize> = (0..k).collect();
    ranking.sort_by(|&a, &b| {
        features[b]
            .mean_abs
            .total_cmp(&features[a].mean_abs)
            .then(a.cmp(&b))
    });
    Ok(AttributionTable {
        features,
        ranking,
        empty_score: per.iter().map(|p| p.empty).sum::<f64>() / n_seq,
        full_score: per.iter().map(|p| p.full).sum::<f64>() / n_seq,
        permutations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation_io::Label;
    use crate::pipeline::FeatureStep;
    use crate::recurrent::CellKind;

    fn seq(id: usize, label: Label, rows: Vec<Vec<f64>>) -> LabeledSequence {
        LabeledSequence {
            sequence_id: format!("s{id:03}"),
            split: Split::Test,
            label,
            onset_token: None,
            steps: rows
                .into_iter()
                .enumerate()
                .map(|(t, features)| FeatureStep {
                    t: t as u64,
                    warm_up: false,
                    features,
                })
                .collect(),
        }
    }

    #[test]
    fn triplet_count() {
        let t = all_triplets();
        assert_eq!(t.len(), 1540);
        assert!(t.iter().all(|x| x[0] < x[1] && x[1] < x[2]));
    }

    #[test]
    fn zero_permutations_is_an_error() {
        let m = RecurrentModel::new(CellKind::Gru, FEATURE_COUNT, 4, 0);
        let s = vec![seq(0, Label::Anomalous, vec![vec![1.0; FEATURE_COUNT]])];
        assert!(shapley_attribution(&m, &s, 0, 0, Pooling::Final).is_err());
    }

    #[test]
    fn shapley_is_efficient_and_deterministic() {
        let m = RecurrentModel::new(CellKind::Gru, FEATURE_COUNT, 5, 2);
        let seqs: Vec<_> = (0..4)
            .map(|i| {
                seq(
                    i,
                    Label::InDistribution,
                    (0..3)
                        .map(|t| {
                            (0..FEATURE_COUNT)
                                .map(|j| ((i + t * 3 + j) as f64).cos())
                                .collect()
                        })
                        .collect(),
                )
            })
            .collect();
        let a = shapley_attribution(&m, &seqs, 5, 11, Pooling::Final).unwrap();
        let b = shapley_attribution(&m, &seqs, 5, 11, Pooling::Final).unwrap();
        assert_eq!(a, b);
        let sum: f64 = a.features.iter().map(|f| f.mean).sum();
        assert!((sum - (a.full_score - a.empty_score)).abs() < 1e-12);
        let shares: f64 = a.features.iter().map(|f| f.share).sum();
        assert!((shares - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_prefix_list_is_an_error() {
        let m = RecurrentModel::new(CellKind::Rnn, FEATURE_COUNT, 3, 0);
        assert!(prefix_auroc_curve(&m, &[], &[], Pooling::Final).is_err());
        assert!(prefix_auroc_curve(&m, &[], &[0], Pooling::Final).is_err());
    }
}
