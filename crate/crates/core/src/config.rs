//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Later assignments override earlier ones, which is how command-line
//! `--set key=value` overrides are layered on top of a file.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use crate::error::ConfigError;
use crate::pipeline::{ClassifierSpec, PipelineConfig, Pooling, DEFAULT_WINDOW};
use crate::recurrent::{CellKind, LossMode, TrainConfig, DEFAULT_HIDDEN};
use crate::spectral::{MpSettings, VarianceMode, LAYOUT_VERSION};
use crate::synthetic::{SplitFractions, SynthKind, SynthSpec};

/// Loss selection; `Auto` picks per-step loss when any stream has an onset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossChoice {
    Auto,
    Fixed(LossMode),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub window: usize,
    pub stride: usize,
    pub r_max: Option<usize>,
    pub layout_version: u32,
    pub layers: Vec<u16>,
    pub mp_bins: usize,
    pub mp_variance: VarianceMode,
    pub center: bool,
    pub cell: CellKind,
    pub hidden: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub gradient_clip: Option<f64>,
    pub loss: LossChoice,
    pub pooling: Pooling,
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub synth_streams: usize,
    pub synth_tokens: usize,
    pub synth_width: usize,
    pub synth_kind: SynthKind,
    pub synth_theta: Vec<f64>,
    pub synth_rho: f64,
    pub synth_variance: f64,
    pub synth_onset: usize,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            window: DEFAULT_WINDOW,
            stride: 1,
            r_max: None,
            layout_version: LAYOUT_VERSION,
            layers: Vec::new(),
            mp_bins: crate::mp::DEFAULT_BINS,
            mp_variance: VarianceMode::Median,
            center: false,
            cell: CellKind::Gru,
            hidden: DEFAULT_HIDDEN,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            epochs: t.epochs,
            batch_size: t.batch_size,
            gradient_clip: t.gradient_clip,
            loss: LossChoice::Auto,
            pooling: Pooling::Final,
            seed: 0,
            data_dir: None,
            out_dir: None,
            synth_streams: 800,
            synth_tokens: 128,
            synth_width: 8,
            synth_kind: SynthKind::Spiked,
            synth_theta: vec![2.0],
            synth_rho: 0.5,
            synth_variance: 1.0,
            synth_onset: 32,
            split_train: 0.6,
            split_val: 0.2,
            split_test: 0.2,
        }
    }
}

/// Every key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("window", "32", "sliding window length N in tokens"),
    ("stride", "1", "emit a feature step every `stride` tokens"),
    (
        "r_max",
        "auto",
        "singular values kept per window; auto = min(window, 64)",
    ),
    (
        "layout_version",
        "1",
        "feature layout version (only 1 is defined)",
    ),
    (
        "layers",
        "",
        "comma-separated monitored layer ids (metadata only)",
    ),
    (
        "mp_bins",
        "64",
        "histogram bins for the MP divergence feature",
    ),
    (
        "mp_variance",
        "median",
        "noise variance: `median` estimate or a fixed positive number",
    ),
    (
        "center",
        "false",
        "subtract column means of each window before the SVD",
    ),
    ("cell", "gru", "recurrent cell: rnn | gru | lstm"),
    ("hidden", "32", "recurrent hidden size"),
    ("learning_rate", "0.001", "Adam learning rate"),
    ("beta1", "0.9", "Adam first-moment decay"),
    ("beta2", "0.999", "Adam second-moment decay"),
    ("epsilon", "1e-8", "Adam denominator offset"),
    ("epochs", "30", "training epochs"),
    ("batch_size", "16", "sequences per optimizer step"),
    ("gradient_clip", "1", "global gradient-norm clip, or `none`"),
    ("loss_mode", "auto", "auto | final_step | per_step_mean"),
    (
        "pooling",
        "final",
        "sequence score: final non-warm-up step or max over steps",
    ),
    (
        "seed",
        "0",
        "root seed for initialization, shuffling and sampling",
    ),
    (
        "data_dir",
        "",
        "corpus directory (falls back to SPECTRACK_DATA_DIR)",
    ),
    ("out_dir", "", "output directory for artifacts"),
    ("synth_streams", "800", "synthetic corpus size (balanced)"),
    ("synth_tokens", "128", "tokens per synthetic stream"),
    ("synth_width", "8", "synthetic frame width m*d"),
    (
        "synth_kind",
        "spiked",
        "anomalous synthetic kind: spiked | drift",
    ),
    ("synth_theta", "2", "comma-separated spike strengths"),
    ("synth_rho", "0.5", "AR(1) token correlation in [0, 1)"),
    ("synth_variance", "1", "noise variance of synthetic frames"),
    ("synth_onset", "32", "drift onset token"),
    ("split_train", "0.6", "training fraction"),
    ("split_val", "0.2", "validation fraction"),
    ("split_test", "0.2", "test fraction"),
];

fn invalid(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_owned(),
        value: value.to_owned(),
        reason: reason.to_string(),
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| invalid(key, value, e))
}

fn finite(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = num(key, value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(key, value, "must be finite"))
    }
}

fn boolean(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(invalid(key, value, "expected true or false")),
    }
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(key, v.trim())).collect()
}

impl RunConfig {
    /// Parses a configuration file on top of the defaults and validates it.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies every assignment in `text` without validating.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                reason: format!("expected key = value, got `{line}`"),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies a single `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax {
                line: 0,
                reason: format!("override must be key=value, got `{assignment}`"),
            })?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "window" => self.window = num(key, value)?,
            "stride" => self.stride = num(key, value)?,
            "r_max" => {
                self.r_max = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "layout_version" => self.layout_version = num(key, value)?,
            "layers" => self.layers = list(key, value)?,
            "mp_bins" => self.mp_bins = num(key, value)?,
            "mp_variance" => {
                self.mp_variance = if value == "median" {
                    VarianceMode::Median
                } else {
                    VarianceMode::Fixed(finite(key, value)?)
                }
            }
            "center" => self.center = boolean(key, value)?,
            "cell" => self.cell = value.parse().map_err(|e: String| invalid(key, value, e))?,
            "hidden" => self.hidden = num(key, value)?,
            "learning_rate" => self.learning_rate = finite(key, value)?,
            "beta1" => self.beta1 = finite(key, value)?,
            "beta2" => self.beta2 = finite(key, value)?,
            "epsilon" => self.epsilon = finite(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "gradient_clip" => {
                self.gradient_clip = if value == "none" {
                    None
                } else {
                    Some(finite(key, value)?)
                }
            }
            "loss_mode" => {
                self.loss = match value {
                    "auto" => LossChoice::Auto,
                    "final_step" => LossChoice::Fixed(LossMode::FinalStep),
                    "per_step_mean" => LossChoice::Fixed(LossMode::PerStepMean),
                    _ => return Err(invalid(key, value, "auto | final_step | per_step_mean")),
                }
            }
            "pooling" => {
                self.pooling = value.parse().map_err(|e: String| invalid(key, value, e))?
            }
            "seed" => self.seed = num(key, value)?,
            "data_dir" => self.data_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            "out_dir" => self.out_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            "synth_streams" => self.synth_streams = num(key, value)?,
            "synth_tokens" => self.synth_tokens = num(key, value)?,
            "synth_width" => self.synth_width = num(key, value)?,
            "synth_kind" => {
                self.synth_kind = match value {
                    "spiked" => SynthKind::Spiked,
                    "drift" => SynthKind::Drift,
                    _ => return Err(invalid(key, value, "spiked | drift")),
                }
            }
            "synth_theta" => self.synth_theta = list(key, value)?,
            "synth_rho" => self.synth_rho = finite(key, value)?,
            "synth_variance" => self.synth_variance = finite(key, value)?,
            "synth_onset" => self.synth_onset = num(key, value)?,
            "split_train" => self.split_train = finite(key, value)?,
            "split_val" => self.split_val = finite(key, value)?,
            "split_test" => self.split_test = finite(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_owned())),
        }
        Ok(())
    }

    /// Checks every module precondition the settings feed into.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = ConfigError::Invalid;
        if self.layout_version != LAYOUT_VERSION {
            return Err(bad(format!(
                "layout_version {} is not supported (only {LAYOUT_VERSION})",
                self.layout_version
            )));
        }
        if self.layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("layers must be strictly increasing".into()));
        }
        if let VarianceMode::Fixed(v) = self.mp_variance {
            if v <= 0.0 {
                return Err(bad("mp_variance must be positive".into()));
            }
        }
        if self.hidden == 0 {
            return Err(bad("hidden must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(bad("epochs must be >= 1".into()));
        }
        self.pipeline().validate().map_err(bad)?;
        self.train_config(LossMode::FinalStep)
            .validate()
            .map_err(bad)?;
        self.split_fractions().validate().map_err(bad)?;
        let (neg, pos) = self.synth_specs();
        neg.validate().map_err(bad)?;
        pos.validate().map_err(bad)?;
        if self.synth_streams < 2 {
            return Err(bad("synth_streams must be >= 2".into()));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            window: self.window,
            stride: self.stride,
            r_max: self.r_max,
            mp: MpSettings {
                bins: self.mp_bins,
                variance: self.mp_variance,
            },
            center: self.center,
        }
    }

    pub fn train_config(&self, auto_mode: LossMode) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            gradient_clip: self.gradient_clip,
            loss_mode: match self.loss {
                LossChoice::Auto => auto_mode,
                LossChoice::Fixed(m) => m,
            },
        }
    }

    pub fn classifier(&self, auto_mode: LossMode) -> ClassifierSpec {
        ClassifierSpec {
            cell: self.cell,
            hidden: self.hidden,
            train: self.train_config(auto_mode),
            seed: self.seed,
        }
    }

    pub fn split_fractions(&self) -> SplitFractions {
        SplitFractions {
            train: self.split_train,
            val: self.split_val,
            test: self.split_test,
        }
    }

    /// Negative (isotropic) and positive generating specs. Per-stream seeds
    /// are assigned by the dataset generator.
    pub fn synth_specs(&self) -> (SynthSpec, SynthSpec) {
        let neg = SynthSpec::isotropic(self.synth_tokens, self.synth_width, 0)
            .with_rho(self.synth_rho)
            .with_variance(self.synth_variance);
        let pos = match self.synth_kind {
            SynthKind::Drift => SynthSpec::drift(
                self.synth_tokens,
                self.synth_width,
                self.synth_theta.clone(),
                self.synth_onset,
                0,
            ),
            _ => SynthSpec::spiked(
                self.synth_tokens,
                self.synth_width,
                self.synth_theta.clone(),
                0,
            ),
        }
        .with_rho(self.synth_rho)
        .with_variance(self.synth_variance);
        (neg, pos)
    }

    /// Canonical text form; parsing it yields an equal configuration.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<String>, none: &str| v.unwrap_or_else(|| none.to_owned());
        let join = |v: &[String]| v.join(",");
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let pairs: Vec<(&str, String)> = vec![
            ("window", self.window.to_string()),
            ("stride", self.stride.to_string()),
            ("r_max", opt(self.r_max.map(|r| r.to_string()), "auto")),
            ("layout_version", self.layout_version.to_string()),
            (
                "layers",
                join(&self.layers.iter().map(u16::to_string).collect::<Vec<_>>()),
            ),
            ("mp_bins", self.mp_bins.to_string()),
            (
                "mp_variance",
                match self.mp_variance {
                    VarianceMode::Median => "median".into(),
                    VarianceMode::Fixed(v) => v.to_string(),
                },
            ),
            ("center", self.center.to_string()),
            ("cell", self.cell.name().to_owned()),
            ("hidden", self.hidden.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            (
                "gradient_clip",
                opt(self.gradient_clip.map(|c| c.to_string()), "none"),
            ),
            (
                "loss_mode",
                match self.loss {
                    LossChoice::Auto => "auto",
                    LossChoice::Fixed(LossMode::FinalStep) => "final_step",
                    LossChoice::Fixed(LossMode::PerStepMean) => "per_step_mean",
                }
                .to_owned(),
            ),
            ("pooling", self.pooling.name().to_owned()),
            ("seed", self.seed.to_string()),
            ("data_dir", path(&self.data_dir)),
            ("out_dir", path(&self.out_dir)),
            ("synth_streams", self.synth_streams.to_string()),
            ("synth_tokens", self.synth_tokens.to_string()),
            ("synth_width", self.synth_width.to_string()),
            (
                "synth_kind",
                match self.synth_kind {
                    SynthKind::Drift => "drift",
                    _ => "spiked",
                }
                .to_owned(),
            ),
            (
                "synth_theta",
                join(
                    &self
                        .synth_theta
                        .iter()
                        .map(f64::to_string)
                        .collect::<Vec<_>>(),
                ),
            ),
            ("synth_rho", self.synth_rho.to_string()),
            ("synth_variance", self.synth_variance.to_string()),
            ("synth_onset", self.synth_onset.to_string()),
            ("split_train", self.split_train.to_string()),
            ("split_val", self.split_val.to_string()),
            ("split_test", self.split_test.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.pipeline().effective_r_max(), 32);
        assert_eq!(c.cell, CellKind::Gru);
        assert_eq!(c.hidden, 32);
    }

    #[test]
    fn parse_with_comments_and_overrides() {
        let mut c = RunConfig::parse(
            "# detector\nwindow = 48  # tokens\n\ncell=lstm\ngradient_clip = none\nmp_variance = 2.5\nlayers = 2, 4, 6\n",
        )
        .unwrap();
        assert_eq!(c.window, 48);
        assert_eq!(c.cell, CellKind::Lstm);
        assert_eq!(c.gradient_clip, None);
        assert_eq!(c.mp_variance, VarianceMode::Fixed(2.5));
        assert_eq!(c.layers, [2, 4, 6]);
        assert_eq!(c.pipeline().effective_r_max(), 48);
        c.apply_override("window=100").unwrap();
        assert_eq!(c.pipeline().effective_r_max(), 64);
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("r_max = 7\nloss_mode = per_step_mean\npooling = max\ndata_dir = /tmp/x\nsynth_theta = 1.5,3")
            .unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(
            RunConfig::parse(&RunConfig::default().to_text()).unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn every_key_is_settable_with_its_default() {
        let mut c = RunConfig::default();
        for (k, d, _) in KEYS {
            let d = if *d == "" && (*k == "layers" || k.ends_with("_dir")) {
                ""
            } else {
                d
            };
            c.set(k, d).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn errors() {
        assert!(matches!(
            RunConfig::parse("bogus = 1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            RunConfig::parse("window 3"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse("window = -3"),
            Err(ConfigError::InvalidValue { .. })
        ));
        assert!(matches!(
            RunConfig::parse("window = 0"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(RunConfig::parse("beta1 = 1").is_err());
        assert!(RunConfig::parse("learning_rate = inf").is_err());
        assert!(RunConfig::parse("layers = 3,3").is_err());
        assert!(RunConfig::parse("layout_version = 2").is_err());
        assert!(RunConfig::parse("split_train = 0.9").is_err());
        assert!(RunConfig::parse("synth_kind = drift\nsynth_onset = 500").is_err());
        assert!(RunConfig::parse("mp_bins = 4").is_err());
    }
}
