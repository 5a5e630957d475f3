//! Streaming feature extraction, corpus loading, feature CSV and scoring.
//!
//! A [`FeaturePipeline`] turns activation frames into feature steps:
//! push the frame into the window, snapshot the window, optionally center
//! its columns, take the truncated SVD and assemble the 22 features. Steps
//! whose window is not yet full are tagged `warm_up`.

use std::fs;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation_io::{
    load_sidecar, read_stream, ActivationFrame, Label, StreamMeta, WindowBuffer, DUMP_SUFFIX,
};
use crate::error::{DumpError, EvalError, ModelError, SpectralError};
use crate::recurrent::{
    probability, CellKind, HiddenState, LossMode, RecurrentModel, StepScratch, TrainSequence,
};
use crate::spectral::{
    degenerate_features, extract_features, truncated_svd, MpSettings, DEFAULT_R_MAX, FEATURE_COUNT,
    FEATURE_NAMES,
};
use crate::synthetic::{ManifestEntry, Split, MANIFEST_FILE};

pub const DEFAULT_WINDOW: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub window: usize,
    /// Emit a feature step every `stride` tokens.
    pub stride: usize,
    /// `None` means min(window, 64).
    pub r_max: Option<usize>,
    pub mp: MpSettings,
    pub center: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: 1,
            r_max: None,
            mp: MpSettings::default(),
            center: false,
        }
    }
}

impl PipelineConfig {
    pub fn with_window(window: usize) -> Self {
        Self {
            window,
            ..Self::default()
        }
    }

    pub fn effective_r_max(&self) -> usize {
        self.r_max.unwrap_or(self.window.min(DEFAULT_R_MAX))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.window == 0 {
            return Err("window must be >= 1".into());
        }
        if self.stride == 0 {
            return Err("stride must be >= 1".into());
        }
        if self.effective_r_max() == 0 {
            return Err("r_max must be >= 1".into());
        }
        if self.mp.bins < 8 {
            return Err(format!("mp bins must be >= 8, got {}", self.mp.bins));
        }
        Ok(())
    }
}

/// Features for one emitted window. `t` is the token index of the newest
/// frame in the window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStep {
    pub t: u64,
    pub warm_up: bool,
    pub features: Vec<f64>,
}

pub struct FeaturePipeline {
    config: PipelineConfig,
    buffer: WindowBuffer,
    pushed: u64,
    last_emitted: bool,
    last_t: u64,
}

impl FeaturePipeline {
    pub fn new(config: PipelineConfig, width: usize) -> Result<Self, EvalError> {
        config.validate().map_err(EvalError::InvalidArgument)?;
        if width == 0 {
            return Err(EvalError::InvalidArgument(
                "frame width must be >= 1".into(),
            ));
        }
        Ok(Self {
            buffer: WindowBuffer::new(config.window, width),
            config,
            pushed: 0,
            last_emitted: false,
            last_t: 0,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Features of the current window contents.
    pub fn current(&self) -> Result<FeatureStep, EvalError> {
        let mut h = self.buffer.window_matrix()?;
        if self.config.center {
            h.center_columns();
        }
        let spectrum = truncated_svd(&h, self.config.effective_r_max())?;
        let fv = match extract_features(&spectrum, &self.config.mp) {
            Err(SpectralError::ZeroSpectrum) => degenerate_features(),
            other => other?,
        };
        Ok(FeatureStep {
            t: self.last_t,
            warm_up: !self.buffer.is_full(),
            features: fv.values,
        })
    }

    /// Pushes one frame; returns a step when the stride schedule emits.
    pub fn push(&mut self, frame: &ActivationFrame) -> Result<Option<FeatureStep>, EvalError> {
        self.buffer.push_token(frame)?;
        self.pushed += 1;
        self.last_t = frame.token_index;
        self.last_emitted = self.pushed % self.config.stride as u64 == 0;
        if self.last_emitted {
            Ok(Some(self.current()?))
        } else {
            Ok(None)
        }
    }

    /// Emits the trailing partial stride, if any frames arrived since the
    /// last emitted step.
    pub fn flush(&mut self) -> Result<Option<FeatureStep>, EvalError> {
        if self.pushed == 0 || self.last_emitted {
            return Ok(None);
        }
        self.last_emitted = true;
        Ok(Some(self.current()?))
    }
}

/// Runs the pipeline over every frame of a dump.
pub fn extract_stream<R: Read>(
    src: R,
    config: &PipelineConfig,
) -> Result<Vec<FeatureStep>, EvalError> {
    let reader = read_stream(src)?;
    let mut pipe = FeaturePipeline::new(*config, reader.header().frame_width())?;
    let mut steps = Vec::new();
    for frame in reader {
        if let Some(s) = pipe.push(&frame?)? {
            steps.push(s);
        }
    }
    steps.extend(pipe.flush()?);
    Ok(steps)
}

pub fn extract_file(path: &Path, config: &PipelineConfig) -> Result<Vec<FeatureStep>, EvalError> {
    let f = fs::File::open(path)?;
    extract_stream(std::io::BufReader::new(f), config)
}

pub fn features_csv_header() -> String {
    let mut h = String::from("t,warm_up");
    for n in FEATURE_NAMES {
        h.push(',');
        h.push_str(n);
    }
    h
}

/// Writes steps as CSV. Values use the shortest representation that
/// parses back to the same f64.
pub fn write_features_csv<W: Write>(steps: &[FeatureStep], mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "{}", features_csv_header())?;
    for s in steps {
        write!(sink, "{},{}", s.t, u8::from(s.warm_up))?;
        for v in &s.features {
            write!(sink, ",{v}")?;
        }
        writeln!(sink)?;
    }
    sink.flush()
}

pub fn read_features_csv<R: BufRead>(src: R) -> Result<Vec<FeatureStep>, DumpError> {
    let mut lines = src.lines();
    let bad = |line: usize, reason: String| DumpError::InvalidCsv { line, reason };
    match lines.next().transpose()? {
        Some(h) if h.trim_end() == features_csv_header() => {}
        Some(_) => return Err(bad(1, "unexpected header".into())),
        None => return Err(bad(1, "missing header".into())),
    }
    let mut steps = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != FEATURE_COUNT + 2 {
            return Err(bad(
                lineno,
                format!(
                    "expected {} fields, got {}",
                    FEATURE_COUNT + 2,
                    fields.len()
                ),
            ));
        }
        let t = fields[0]
            .parse::<u64>()
            .map_err(|e| bad(lineno, format!("t: {e}")))?;
        let warm_up = match fields[1] {
            "0" => false,
            "1" => true,
            other => return Err(bad(lineno, format!("warm_up must be 0 or 1, got {other}"))),
        };
        let features = fields[2..]
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(bad(lineno, "non-finite feature".into())),
                Err(e) => Err(bad(lineno, format!("{f}: {e}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        steps.push(FeatureStep {
            t,
            warm_up,
            features,
        });
    }
    Ok(steps)
}

/// One stream of a corpus on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub sequence_id: String,
    pub split: Split,
    pub dump: PathBuf,
    pub meta: StreamMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub root: PathBuf,
    /// Sorted by sequence_id.
    pub entries: Vec<CorpusEntry>,
}

#[derive(Deserialize)]
struct ManifestMembers {
    members: Vec<ManifestEntry>,
}

impl Corpus {
    /// Loads `dir/manifest.json` if present. Otherwise every `*.bin` with a
    /// sidecar in `dir` and its `train`, `val` and `test` subdirectories is
    /// used; the split is the subdirectory name, and `test` at top level.
    pub fn load(dir: &Path) -> Result<Self, DumpError> {
        let manifest = dir.join(MANIFEST_FILE);
        let mut entries = Vec::new();
        if manifest.is_file() {
            let text = fs::read_to_string(&manifest)?;
            let m: ManifestMembers = serde_json::from_str(&text)
                .map_err(|e| DumpError::InvalidMeta(format!("{}: {e}", manifest.display())))?;
            for e in m.members {
                let dump = dir.join(&e.dump);
                let meta = load_sidecar(&dump)?.ok_or_else(|| {
                    DumpError::InvalidMeta(format!("{}: missing sidecar", dump.display()))
                })?;
                entries.push(CorpusEntry {
                    sequence_id: meta.sequence_id.clone(),
                    split: e.split,
                    dump,
                    meta,
                });
            }
        } else {
            let candidates = [
                (dir.to_path_buf(), Split::Test),
                (dir.join("train"), Split::Train),
                (dir.join("val"), Split::Val),
                (dir.join("test"), Split::Test),
            ];
            for (sub, split) in candidates {
                if !sub.is_dir() {
                    continue;
                }
                let mut paths: Vec<PathBuf> = fs::read_dir(&sub)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_file() && p.to_string_lossy().ends_with(DUMP_SUFFIX))
                    .collect();
                paths.sort();
                for dump in paths {
                    if let Some(meta) = load_sidecar(&dump)? {
                        entries.push(CorpusEntry {
                            sequence_id: meta.sequence_id.clone(),
                            split,
                            dump,
                            meta,
                        });
                    }
                }
            }
        }
        entries.sort_by(|a, b| a.sequence_id.cmp(&b.sequence_id));
        if entries
            .windows(2)
            .any(|w| w[0].sequence_id == w[1].sequence_id)
        {
            return Err(DumpError::InvalidMeta(
                "duplicate sequence_id in corpus".into(),
            ));
        }
        Ok(Self {
            root: dir.to_path_buf(),
            entries,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// True when any stream carries an anomaly onset.
    pub fn has_onsets(&self) -> bool {
        self.entries.iter().any(|e| e.meta.onset_token.is_some())
    }
}

/// A featurized, labelled stream.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub sequence_id: String,
    pub split: Split,
    pub label: Label,
    pub onset_token: Option<u64>,
    pub steps: Vec<FeatureStep>,
}

impl LabeledSequence {
    pub fn features(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.features.clone()).collect()
    }

    pub fn warmup_steps(&self) -> usize {
        self.steps.iter().take_while(|s| s.warm_up).count()
    }

    /// Per-step targets: with an onset, 1 from the onset token on and 0
    /// before; otherwise the sequence label everywhere.
    pub fn step_labels(&self) -> Vec<f64> {
        self.steps
            .iter()
            .map(|s| match self.onset_token {
                Some(o) => f64::from(u8::from(s.t >= o)),
                None => self.label.as_f64(),
            })
            .collect()
    }

    pub fn train_sequence(&self) -> TrainSequence {
        TrainSequence {
            features: self.features(),
            labels: self.step_labels(),
            warmup: self.warmup_steps(),
        }
    }

    /// Steps whose newest token index is below `prefix`.
    pub fn prefix(&self, prefix: u64) -> LabeledSequence {
        LabeledSequence {
            steps: self
                .steps
                .iter()
                .filter(|s| s.t < prefix)
                .cloned()
                .collect(),
            ..self.clone()
        }
    }
}

/// Featurizes corpus entries in parallel; output order follows the input.
pub fn featurize(
    entries: &[&CorpusEntry],
    config: &PipelineConfig,
) -> Result<Vec<LabeledSequence>, EvalError> {
    entries
        .par_iter()
        .map(|e| {
            let label = e.meta.label.ok_or_else(|| {
                EvalError::InvalidArgument(format!("{}: stream has no label", e.sequence_id))
            })?;
            let steps = extract_file(&e.dump, config)?;
            if steps.is_empty() {
                return Err(EvalError::InvalidArgument(format!(
                    "{}: stream has no frames",
                    e.sequence_id
                )));
            }
            Ok(LabeledSequence {
                sequence_id: e.sequence_id.clone(),
                split: e.split,
                label,
                onset_token: e.meta.onset_token,
                steps,
            })
        })
        .collect()
}

/// Per-step loss when any stream has an onset, else final-step loss.
pub fn auto_loss_mode(seqs: &[LabeledSequence]) -> LossMode {
    if seqs.iter().any(|s| s.onset_token.is_some()) {
        LossMode::PerStepMean
    } else {
        LossMode::FinalStep
    }
}

/// How per-step logits become one sequence score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Sigmoid of the last non-warm-up logit.
    #[default]
    Final,
    /// Max sigmoid over non-warm-up steps.
    Max,
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "final" => Ok(Pooling::Final),
            "max" => Ok(Pooling::Max),
            other => Err(format!("unknown pooling `{other}` (final | max)")),
        }
    }
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::Final => "final",
            Pooling::Max => "max",
        }
    }
}

/// Pools per-step logits. When every step is warm-up, all steps are used.
pub fn pool_logits(logits: &[f64], warm_up: &[bool], pooling: Pooling) -> f64 {
    let scored: Vec<f64> = logits
        .iter()
        .zip(warm_up)
        .filter(|(_, &w)| !w)
        .map(|(&l, _)| l)
        .collect();
    let pool = if scored.is_empty() {
        logits
    } else {
        &scored[..]
    };
    match pooling {
        Pooling::Final => probability(*pool.last().expect("nonempty logits")),
        Pooling::Max => pool
            .iter()
            .map(|&l| probability(l))
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Sequence score; `None` for a sequence without steps.
pub fn score_sequence(
    model: &RecurrentModel,
    steps: &[FeatureStep],
    pooling: Pooling,
) -> Result<Option<f64>, ModelError> {
    if steps.is_empty() {
        return Ok(None);
    }
    let features: Vec<Vec<f64>> = steps.iter().map(|s| s.features.clone()).collect();
    let logits = model.forward_sequence(&features)?;
    let warm: Vec<bool> = steps.iter().map(|s| s.warm_up).collect();
    Ok(Some(pool_logits(&logits, &warm, pooling)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredStep {
    pub t: u64,
    pub logit: f64,
    pub score: f64,
    pub warm_up: bool,
}

/// Single-pass detector: frames in, per-step scores out. Memory is the
/// window ring plus the model, independent of stream length.
pub struct StreamingDetector<'m> {
    model: &'m RecurrentModel,
    pipeline: FeaturePipeline,
    state: HiddenState,
    scratch: StepScratch,
    z: Vec<f64>,
    steps: usize,
}

impl<'m> StreamingDetector<'m> {
    pub fn new(
        model: &'m RecurrentModel,
        config: PipelineConfig,
        width: usize,
    ) -> Result<Self, EvalError> {
        if model.input_dim() != FEATURE_COUNT {
            return Err(EvalError::Model(ModelError::Dimension(format!(
                "model expects {} features, pipeline yields {FEATURE_COUNT}",
                model.input_dim()
            ))));
        }
        Ok(Self {
            pipeline: FeaturePipeline::new(config, width)?,
            state: model.initial_state(),
            scratch: StepScratch::new(&model.layout),
            z: vec![0.0; FEATURE_COUNT],
            model,
            steps: 0,
        })
    }

    pub fn push(&mut self, frame: &ActivationFrame) -> Result<Option<ScoredStep>, EvalError> {
        match self.pipeline.push(frame)? {
            Some(step) => Ok(Some(self.score_step(&step)?)),
            None => Ok(None),
        }
    }

    pub fn flush(&mut self) -> Result<Option<ScoredStep>, EvalError> {
        match self.pipeline.flush()? {
            Some(step) => Ok(Some(self.score_step(&step)?)),
            None => Ok(None),
        }
    }

    /// Advances the recurrent state on a precomputed feature step.
    pub fn score_step(&mut self, step: &FeatureStep) -> Result<ScoredStep, EvalError> {
        if step.features.len() != FEATURE_COUNT {
            return Err(ModelError::Dimension(format!(
                "expected {FEATURE_COUNT} features, got {}",
                step.features.len()
            ))
            .into());
        }
        if step.features.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { step: self.steps }.into());
        }
        self.model.norm.apply(&step.features, &mut self.z);
        let logit = self
            .model
            .step_normalized(&self.z, &mut self.state, &mut self.scratch, None);
        self.steps += 1;
        Ok(ScoredStep {
            t: step.t,
            logit,
            score: probability(logit),
            warm_up: step.warm_up,
        })
    }
}

/// Classifier settings shared by training entry points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub cell: CellKind,
    pub hidden: usize,
    pub train: crate::recurrent::TrainConfig,
    /// Seeds parameter initialization.
    pub seed: u64,
}

/// Trains a fresh classifier on `seqs`. Features with `mask[i] == false`
/// are fed as zero in normalized space.
pub fn fit_classifier(
    seqs: &[LabeledSequence],
    spec: &ClassifierSpec,
    mask: Option<&[bool]>,
) -> Result<(RecurrentModel, Vec<crate::recurrent::EpochStats>), ModelError> {
    let data: Vec<TrainSequence> = seqs.iter().map(LabeledSequence::train_sequence).collect();
    let mut model = RecurrentModel::new(spec.cell, FEATURE_COUNT, spec.hidden, spec.seed);
    if let Some(m) = mask {
        if m.len() != FEATURE_COUNT {
            return Err(ModelError::Dimension("mask length".into()));
        }
        model.norm.mask = m.to_vec();
    }
    crate::recurrent::fit_normalizer(&mut model, &data);
    let log = crate::recurrent::train(&mut model, &data, &spec.train)?;
    Ok((model, log))
}
