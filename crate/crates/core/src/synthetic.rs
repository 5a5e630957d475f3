//! Synthetic activation streams with known spectral structure.
//!
//! Isotropic streams draw each frame from N(0, σ²I); spiked streams from
//! N(0, σ²(I + Σ_j θ_j u_j u_jᵀ)) with orthonormal directions u_j drawn per
//! stream; drift streams switch from isotropic to spiked at `onset_token`.
//! Token-to-token correlation is an AR(1) process on the underlying white
//! noise, scaled so the per-frame marginal covariance is unchanged.
//!
//! Frames are rounded to f32 so that a stream written to an f32 dump reads
//! back bit-identically.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activation_io::{
    write_meta_lines, ActivationFrame, Label, ScalarWidth, StreamHeader, StreamMeta, StreamWriter,
    DUMP_SUFFIX, META_SUFFIX,
};
use crate::error::DumpError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Isotropic,
    Spiked,
    Drift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n_tokens: usize,
    /// Frame width m·d.
    pub width: usize,
    pub variance: f64,
    /// Spike strengths θ_j (spiked and drift kinds).
    #[serde(default)]
    pub spikes: Vec<f64>,
    /// First spiked token (drift kind).
    #[serde(default)]
    pub onset_token: Option<usize>,
    /// AR(1) coefficient across tokens, in [0, 1).
    #[serde(default)]
    pub rho: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn isotropic(n_tokens: usize, width: usize, seed: u64) -> Self {
        Self {
            kind: SynthKind::Isotropic,
            n_tokens,
            width,
            variance: 1.0,
            spikes: Vec::new(),
            onset_token: None,
            rho: 0.0,
            seed,
        }
    }

    pub fn spiked(n_tokens: usize, width: usize, spikes: Vec<f64>, seed: u64) -> Self {
        Self {
            kind: SynthKind::Spiked,
            spikes,
            ..Self::isotropic(n_tokens, width, seed)
        }
    }

    pub fn drift(n_tokens: usize, width: usize, spikes: Vec<f64>, onset: usize, seed: u64) -> Self {
        Self {
            kind: SynthKind::Drift,
            spikes,
            onset_token: Some(onset),
            ..Self::isotropic(n_tokens, width, seed)
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_variance(mut self, variance: f64) -> Self {
        self.variance = variance;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_tokens == 0 || self.width == 0 {
            return Err("n_tokens and width must be positive".into());
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(format!("variance must be positive, got {}", self.variance));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if self.spikes.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err("spike strengths must be positive".into());
        }
        if self.spikes.len() > self.width {
            return Err("more spikes than dimensions".into());
        }
        match self.kind {
            SynthKind::Isotropic => {}
            SynthKind::Spiked | SynthKind::Drift if self.spikes.is_empty() => {
                return Err("spiked and drift streams need at least one spike".into())
            }
            _ => {}
        }
        if self.kind == SynthKind::Drift {
            match self.onset_token {
                Some(o) if o < self.n_tokens => {}
                Some(o) => return Err(format!("onset {o} must be < n_tokens {}", self.n_tokens)),
                None => return Err("drift streams need onset_token".into()),
            }
        }
        Ok(())
    }

    pub fn label(&self) -> Label {
        if self.kind == SynthKind::Isotropic {
            Label::InDistribution
        } else {
            Label::Anomalous
        }
    }

    pub fn header(&self) -> StreamHeader {
        StreamHeader::new(vec![0], self.width as u32, ScalarWidth::F32)
            .with_token_count(self.n_tokens as u64)
    }

    pub fn meta(&self, sequence_id: &str) -> StreamMeta {
        StreamMeta {
            sequence_id: sequence_id.to_owned(),
            label: Some(self.label()),
            onset_token: match self.kind {
                SynthKind::Drift => self.onset_token.map(|o| o as u64),
                _ => None,
            },
            source: format!("synthetic:{}", kind_name(self.kind)),
        }
    }
}

fn kind_name(k: SynthKind) -> &'static str {
    match k {
        SynthKind::Isotropic => "isotropic",
        SynthKind::Spiked => "spiked",
        SynthKind::Drift => "drift",
    }
}

/// Orthonormal directions from Gram–Schmidt on Gaussian vectors.
fn orthonormal_directions<R: Rng>(rng: &mut R, count: usize, width: usize) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(count);
    while dirs.len() < count {
        let mut v: Vec<f64> = (0..width).map(|_| rng.sample(StandardNormal)).collect();
        for u in &dirs {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            dirs.push(v);
        }
    }
    dirs
}

/// Lazily generates the frames of one synthetic stream.
pub struct StreamGenerator {
    spec: SynthSpec,
    rng: ChaCha8Rng,
    // (direction, sqrt(1 + θ) − 1)
    spikes: Vec<(Vec<f64>, f64)>,
    state: Vec<f64>,
    t: usize,
}

impl StreamGenerator {
    pub fn new(spec: SynthSpec) -> Result<Self, String> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let dirs = orthonormal_directions(&mut rng, spec.spikes.len(), spec.width);
        let spikes = dirs
            .into_iter()
            .zip(&spec.spikes)
            .map(|(u, &theta)| (u, (1.0 + theta).sqrt() - 1.0))
            .collect();
        Ok(Self {
            state: vec![0.0; spec.width],
            spec,
            rng,
            spikes,
            t: 0,
        })
    }

    fn spiked_at(&self, t: usize) -> bool {
        match self.spec.kind {
            SynthKind::Isotropic => false,
            SynthKind::Spiked => true,
            SynthKind::Drift => t >= self.spec.onset_token.unwrap_or(usize::MAX),
        }
    }
}

impl Iterator for StreamGenerator {
    type Item = ActivationFrame;

    fn next(&mut self) -> Option<ActivationFrame> {
        if self.t >= self.spec.n_tokens {
            return None;
        }
        let rho = self.spec.rho;
        let innovation = (1.0 - rho * rho).sqrt();
        for s in self.state.iter_mut() {
            let w: f64 = self.rng.sample(StandardNormal);
            *s = if self.t == 0 {
                w
            } else {
                rho * *s + innovation * w
            };
        }
        let mut x = self.state.clone();
        if self.spiked_at(self.t) {
            for (u, scale) in &self.spikes {
                let proj: f64 = u.iter().zip(&self.state).map(|(a, b)| a * b).sum();
                x.iter_mut()
                    .zip(u)
                    .for_each(|(xi, ui)| *xi += scale * proj * ui);
            }
        }
        let sd = self.spec.variance.sqrt();
        let values = x.into_iter().map(|v| (v * sd) as f32 as f64).collect();
        let frame = ActivationFrame::new(self.t as u64, values);
        self.t += 1;
        Some(frame)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStream {
    pub header: StreamHeader,
    pub frames: Vec<ActivationFrame>,
    pub meta: StreamMeta,
}

/// Generates one full stream in memory.
pub fn gen_stream(spec: &SynthSpec) -> Result<SyntheticStream, String> {
    let frames: Vec<_> = StreamGenerator::new(spec.clone())?.collect();
    Ok(SyntheticStream {
        header: spec.header(),
        meta: spec.meta(&format!("synth-{}", spec.seed)),
        frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), String> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err("split fractions must lie in [0, 1]".into());
        }
        if ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err("split fractions must sum to 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sequence_id: String,
    pub split: Split,
    pub label: Label,
    /// Paths relative to the corpus directory.
    pub dump: String,
    pub meta: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub negative: SynthSpec,
    pub positive: SynthSpec,
    pub fractions: SplitFractions,
    pub members: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Plans a balanced, stratified corpus without touching the filesystem.
/// Each member carries the exact spec (with its derived seed) that
/// generates it.
pub fn plan_dataset(
    n_streams: usize,
    negative: &SynthSpec,
    positive: &SynthSpec,
    fractions: SplitFractions,
    seed: u64,
) -> Result<Vec<(ManifestEntry, SynthSpec)>, String> {
    fractions.validate()?;
    negative.validate()?;
    positive.validate()?;
    if n_streams < 2 {
        return Err("need at least two streams".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = n_streams / 2;
    let n_neg = n_streams - n_pos;
    let mut plan = Vec::with_capacity(n_streams);
    for (role, count, base) in [
        (Label::InDistribution, n_neg, negative),
        (Label::Anomalous, n_pos, positive),
    ] {
        let mut splits = Vec::with_capacity(count);
        let n_train = (count as f64 * fractions.train).round() as usize;
        let n_val = ((count as f64 * fractions.val).round() as usize).min(count - n_train);
        splits.extend(std::iter::repeat_n(Split::Train, n_train));
        splits.extend(std::iter::repeat_n(Split::Val, n_val));
        splits.extend(std::iter::repeat_n(Split::Test, count - n_train - n_val));
        splits.shuffle(&mut rng);
        for split in splits {
            let idx = plan.len();
            let spec = base.clone().with_seed(rng.next_u64());
            let id = format!("seq-{idx:05}");
            let dir = split.name();
            plan.push((
                ManifestEntry {
                    sequence_id: id.clone(),
                    split,
                    label: role,
                    dump: format!("{dir}/{id}{DUMP_SUFFIX}"),
                    meta: format!("{dir}/{id}{META_SUFFIX}"),
                },
                spec,
            ));
        }
    }
    Ok(plan)
}

/// Writes a balanced labelled corpus (dumps, sidecars, manifest) to `out`.
///
/// Labels follow the role of the generating spec: streams from `negative`
/// are labelled 0 and streams from `positive` 1, whatever their kind.
pub fn gen_dataset(
    n_streams: usize,
    negative: &SynthSpec,
    positive: &SynthSpec,
    fractions: SplitFractions,
    seed: u64,
    out: &Path,
) -> Result<CorpusManifest, DumpError> {
    let plan = plan_dataset(n_streams, negative, positive, fractions, seed)
        .map_err(DumpError::InvalidMeta)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        fs::create_dir_all(out.join(split.name()))?;
    }
    let mut members = Vec::with_capacity(plan.len());
    for (entry, spec) in plan {
        let mut meta = spec.meta(&entry.sequence_id);
        meta.label = Some(entry.label);
        if entry.label != Label::Anomalous {
            meta.onset_token = None;
        }
        let mut w = StreamWriter::new(
            BufWriter::new(File::create(out.join(&entry.dump))?),
            spec.header(),
        )?;
        for frame in StreamGenerator::new(spec).map_err(DumpError::InvalidMeta)? {
            w.write_frame(&frame)?;
        }
        w.finish()?;
        write_meta_lines(
            &[meta],
            BufWriter::new(File::create(out.join(&entry.meta))?),
        )?;
        members.push(entry);
    }
    let manifest = CorpusManifest {
        seed,
        negative: negative.clone(),
        positive: positive.clone(),
        fractions,
        members,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DumpError::InvalidMeta(e.to_string()))?;
    fs::write(out.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation_io::read_stream;
    use std::collections::HashSet;

    #[test]
    fn same_seed_same_stream() {
        let spec = SynthSpec::spiked(20, 6, vec![2.0], 5).with_rho(0.5);
        assert_eq!(gen_stream(&spec).unwrap(), gen_stream(&spec).unwrap());
        let other = gen_stream(&spec.clone().with_seed(6)).unwrap();
        assert_ne!(gen_stream(&spec).unwrap().frames, other.frames);
    }

    #[test]
    fn labels_and_onset() {
        let iso = gen_stream(&SynthSpec::isotropic(4, 3, 1)).unwrap();
        assert_eq!(iso.meta.label, Some(Label::InDistribution));
        let d = gen_stream(&SynthSpec::drift(10, 3, vec![1.0], 4, 1)).unwrap();
        assert_eq!(d.meta.label, Some(Label::Anomalous));
        assert_eq!(d.meta.onset_token, Some(4));
        assert_eq!(d.frames.len(), 10);
    }

    #[test]
    fn drift_prefix_matches_isotropic_draws() {
        // Before onset the drift stream consumes the same draws as an
        // isotropic stream with the same seed and spike count.
        let d = gen_stream(&SynthSpec::drift(12, 4, vec![3.0], 6, 9)).unwrap();
        let mut iso = SynthSpec::spiked(12, 4, vec![3.0], 9);
        iso.kind = SynthKind::Isotropic;
        let i = gen_stream(&iso).unwrap();
        assert_eq!(d.frames[..6], i.frames[..6]);
        assert_ne!(d.frames[6..], i.frames[6..]);
    }

    #[test]
    fn invalid_specs() {
        assert!(SynthSpec::isotropic(0, 3, 1).validate().is_err());
        assert!(SynthSpec::spiked(5, 3, vec![], 1).validate().is_err());
        assert!(SynthSpec::spiked(5, 3, vec![-1.0], 1).validate().is_err());
        assert!(SynthSpec::drift(5, 3, vec![1.0], 5, 1).validate().is_err());
        assert!(SynthSpec::isotropic(5, 3, 1)
            .with_rho(1.0)
            .validate()
            .is_err());
    }

    #[test]
    fn frames_survive_f32_dump() {
        let s = gen_stream(&SynthSpec::spiked(8, 5, vec![2.0], 3)).unwrap();
        let mut buf = Vec::new();
        crate::activation_io::write_stream(&s.header, &s.frames, &mut buf).unwrap();
        let back: Vec<_> = read_stream(&buf[..])
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(back, s.frames);
    }

    #[test]
    fn dataset_plan_properties() {
        let neg = SynthSpec::isotropic(8, 4, 0);
        let pos = SynthSpec::spiked(8, 4, vec![2.0], 0);
        let plan = plan_dataset(101, &neg, &pos, SplitFractions::default(), 3).unwrap();
        assert_eq!(plan.len(), 101);
        let pos_n = plan
            .iter()
            .filter(|(e, _)| e.label == Label::Anomalous)
            .count();
        let frac = pos_n as f64 / 101.0;
        assert!((frac - 0.5).abs() <= 0.01, "{frac}");
        let ids: HashSet<_> = plan.iter().map(|(e, _)| e.sequence_id.clone()).collect();
        assert_eq!(ids.len(), 101);
        let per_split = |s: Split| plan.iter().filter(|(e, _)| e.split == s).count();
        assert_eq!(
            per_split(Split::Train) + per_split(Split::Val) + per_split(Split::Test),
            101
        );
    }
}
