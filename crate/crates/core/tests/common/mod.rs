#![allow(dead_code)]

use std::path::Path;

use spectrack::pipeline::{
    featurize, ClassifierSpec, Corpus, CorpusEntry, LabeledSequence, PipelineConfig,
};
use spectrack::recurrent::{CellKind, LossMode, TrainConfig};
use spectrack::synthetic::{gen_dataset, Split, SplitFractions, SynthSpec};

/// Writes a corpus under `dir` and featurizes every split.
pub fn corpus(
    dir: &Path,
    n: usize,
    negative: &SynthSpec,
    positive: &SynthSpec,
    cfg: &PipelineConfig,
    seed: u64,
) -> (Corpus, [Vec<LabeledSequence>; 3]) {
    gen_dataset(n, negative, positive, SplitFractions::default(), seed, dir).unwrap();
    let corpus = Corpus::load(dir).unwrap();
    let split = |s: Split| {
        let entries: Vec<&CorpusEntry> = corpus.split(s).collect();
        featurize(&entries, cfg).unwrap()
    };
    let sets = [split(Split::Train), split(Split::Val), split(Split::Test)];
    (corpus, sets)
}

pub fn small_spec(cell: CellKind, epochs: usize, loss_mode: LossMode) -> ClassifierSpec {
    ClassifierSpec {
        cell,
        hidden: 16,
        train: TrainConfig {
            epochs,
            learning_rate: 5e-3,
            loss_mode,
            ..TrainConfig::default()
        },
        seed: 3,
    }
}
