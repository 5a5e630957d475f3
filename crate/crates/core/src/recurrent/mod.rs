//! Recurrent sequence classifier: a linear input layer, one recurrent cell
//! (tanh RNN, GRU or LSTM) and a single-logit output head.
//!
//! Parameters live in one flat `f64` buffer addressed through [`Layout`], so
//! gradients, optimizer state and weight files share the same indexing.
//! Gate blocks are stacked in the order RNN `[h]`, GRU `[z, r, n]`,
//! LSTM `[i, f, g, o]`.
//!
//! GRU update convention: `h' = (1 − z)·h + z·n`, so a closed update gate
//! (z = 0) leaves the hidden state untouched.

mod backward;
mod train;
mod weights;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

pub use backward::{bce, bce_loss, Gradients, LossMode};
pub use train::{fit_normalizer, train, Adam, EpochStats, TrainConfig, TrainSequence};
pub use weights::{
    load_model, read_model, save_model, write_model, WEIGHTS_MAGIC, WEIGHTS_VERSION,
};

pub const DEFAULT_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Gru,
    Lstm,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Rnn, CellKind::Gru, CellKind::Lstm];

    pub fn gates(self) -> usize {
        match self {
            CellKind::Rnn => 1,
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Rnn => "rnn",
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            CellKind::Rnn => 0,
            CellKind::Gru => 1,
            CellKind::Lstm => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(CellKind::Rnn),
            1 => Some(CellKind::Gru),
            2 => Some(CellKind::Lstm),
            _ => None,
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" => Ok(CellKind::Rnn),
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(format!("unknown cell kind {other:?} (rnn, gru, lstm)")),
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Offsets of each parameter block in the flat buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub cell: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `h × k`, row j feeds hidden input j.
    pub w_in: usize,
    pub b_in: usize,
    /// `(G·h) × h` input-to-gate weights.
    pub w_x: usize,
    /// `(G·h) × h` hidden-to-gate weights.
    pub w_h: usize,
    pub b_gate: usize,
    pub w_out: usize,
    pub b_out: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(cell: CellKind, input_dim: usize, hidden_dim: usize) -> Self {
        let (k, h, g) = (input_dim, hidden_dim, cell.gates());
        let w_in = 0;
        let b_in = w_in + h * k;
        let w_x = b_in + h;
        let w_h = w_x + g * h * h;
        let b_gate = w_h + g * h * h;
        let w_out = b_gate + g * h;
        let b_out = w_out + h;
        Self {
            cell,
            input_dim,
            hidden_dim,
            w_in,
            b_in,
            w_x,
            w_h,
            b_gate,
            w_out,
            b_out,
            total: b_out + 1,
        }
    }

    pub fn gate_rows(&self) -> usize {
        self.cell.gates() * self.hidden_dim
    }
}

/// Per-feature z-scoring fitted on training data, plus a keep-mask used by
/// ablation (masked features are fed as 0, i.e. their training mean).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Normalizer {
    pub fn identity(k: usize) -> Self {
        Self {
            mean: vec![0.0; k],
            std: vec![1.0; k],
            mask: vec![true; k],
        }
    }

    /// Fits mean and population std over every step of every sequence.
    /// Constant features get std 1.
    pub fn fit<'a, I>(k: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut n = 0usize;
        let mut mean = vec![0.0; k];
        let mut m2 = vec![0.0; k];
        for row in rows {
            n += 1;
            for i in 0..k {
                let d = row[i] - mean[i];
                mean[i] += d / n as f64;
                m2[i] += d * (row[i] - mean[i]);
            }
        }
        let std = m2
            .iter()
            .map(|&s| {
                let sd = if n > 0 { (s / n as f64).sqrt() } else { 0.0 };
                if sd > 1e-12 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self {
            mean,
            std,
            mask: vec![true; k],
        }
    }

    pub fn apply(&self, raw: &[f64], out: &mut [f64]) {
        for i in 0..raw.len() {
            out[i] = if self.mask[i] {
                (raw[i] - self.mean[i]) / self.std[i]
            } else {
                0.0
            };
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h: Vec<f64>,
    /// LSTM cell state; empty for the other kinds.
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentModel {
    pub layout: Layout,
    pub params: Vec<f64>,
    pub norm: Normalizer,
    pub layout_version: u32,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out += W x` for row-major `W` of shape `out.len() × x.len()`.
pub(crate) fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl RecurrentModel {
    /// Uniform(−1/√h, 1/√h) weights, zero biases, LSTM forget bias +1.
    pub fn new(cell: CellKind, input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let layout = Layout::new(cell, input_dim, hidden_dim);
        let mut params = vec![0.0; layout.total];
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight_blocks = [
            (layout.w_in, layout.b_in),
            (layout.w_x, layout.w_h),
            (layout.w_h, layout.b_gate),
            (layout.w_out, layout.b_out),
        ];
        for (start, end) in weight_blocks {
            for p in &mut params[start..end] {
                *p = rng.random_range(-bound..bound);
            }
        }
        let mut model = Self {
            layout,
            params,
            norm: Normalizer::identity(input_dim),
            layout_version: crate::spectral::LAYOUT_VERSION,
        };
        if cell == CellKind::Lstm {
            model.forget_bias_mut().iter_mut().for_each(|b| *b = 1.0);
        }
        model
    }

    pub fn zeros(cell: CellKind, input_dim: usize, hidden_dim: usize) -> Self {
        let layout = Layout::new(cell, input_dim, hidden_dim);
        Self {
            params: vec![0.0; layout.total],
            layout,
            norm: Normalizer::identity(input_dim),
            layout_version: crate::spectral::LAYOUT_VERSION,
        }
    }

    pub fn cell(&self) -> CellKind {
        self.layout.cell
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.layout.hidden_dim
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    fn forget_bias_mut(&mut self) -> &mut [f64] {
        let h = self.layout.hidden_dim;
        let start = self.layout.b_gate + h;
        &mut self.params[start..start + h]
    }

    pub fn w_in(&self) -> &[f64] {
        &self.params[self.layout.w_in..self.layout.b_in]
    }

    pub fn w_in_mut(&mut self) -> &mut [f64] {
        let l = self.layout;
        &mut self.params[l.w_in..l.b_in]
    }

    pub fn gate_bias_mut(&mut self) -> &mut [f64] {
        let l = self.layout;
        &mut self.params[l.b_gate..l.w_out]
    }

    pub fn w_x_mut(&mut self) -> &mut [f64] {
        let l = self.layout;
        &mut self.params[l.w_x..l.w_h]
    }

    pub fn w_h_mut(&mut self) -> &mut [f64] {
        let l = self.layout;
        &mut self.params[l.w_h..l.b_gate]
    }

    pub fn w_out_mut(&mut self) -> &mut [f64] {
        let l = self.layout;
        &mut self.params[l.w_out..l.b_out]
    }

    pub fn b_out_mut(&mut self) -> &mut f64 {
        let l = self.layout;
        &mut self.params[l.b_out]
    }

    pub fn initial_state(&self) -> HiddenState {
        let h = self.layout.hidden_dim;
        HiddenState {
            h: vec![0.0; h],
            c: if self.layout.cell == CellKind::Lstm {
                vec![0.0; h]
            } else {
                Vec::new()
            },
        }
    }

    fn check_input(&self, features: &[f64], step: usize) -> Result<(), ModelError> {
        if features.len() != self.layout.input_dim {
            return Err(ModelError::Dimension(format!(
                "expected {} features, got {}",
                self.layout.input_dim,
                features.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { step });
        }
        Ok(())
    }

    /// One step on raw (unnormalized) features.
    pub fn forward_step(
        &self,
        features: &[f64],
        state: &HiddenState,
    ) -> Result<(f64, HiddenState), ModelError> {
        self.check_input(features, 0)?;
        let h = self.layout.hidden_dim;
        if state.h.len() != h || (self.layout.cell == CellKind::Lstm && state.c.len() != h) {
            return Err(ModelError::Dimension("hidden state size mismatch".into()));
        }
        let mut z = vec![0.0; features.len()];
        self.norm.apply(features, &mut z);
        let mut next = state.clone();
        let logit = self.step_normalized(&z, &mut next, &mut StepScratch::new(&self.layout), None);
        Ok((logit, next))
    }

    /// Per-step logits for a whole sequence. Logit t depends only on
    /// features 0..=t.
    pub fn forward_sequence(&self, features: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
        if features.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let mut state = self.initial_state();
        let mut scratch = StepScratch::new(&self.layout);
        let mut z = vec![0.0; self.layout.input_dim];
        let mut logits = Vec::with_capacity(features.len());
        for (t, f) in features.iter().enumerate() {
            self.check_input(f, t)?;
            self.norm.apply(f, &mut z);
            logits.push(self.step_normalized(&z, &mut state, &mut scratch, None));
        }
        Ok(logits)
    }

    /// Same as [`forward_sequence`](Self::forward_sequence) for inputs that
    /// are already normalized and masked.
    pub(crate) fn forward_normalized(&self, inputs: &[Vec<f64>]) -> Vec<f64> {
        let mut state = self.initial_state();
        let mut scratch = StepScratch::new(&self.layout);
        inputs
            .iter()
            .map(|z| self.step_normalized(z, &mut state, &mut scratch, None))
            .collect()
    }

    /// Advances `state` by one normalized input and returns the logit.
    /// When `cache` is given, the intermediate activations are recorded for
    /// backpropagation.
    pub(crate) fn step_normalized(
        &self,
        z: &[f64],
        state: &mut HiddenState,
        s: &mut StepScratch,
        cache: Option<&mut backward::StepCache>,
    ) -> f64 {
        let l = &self.layout;
        let (k, h) = (l.input_dim, l.hidden_dim);
        let p = &self.params;

        // Input layer.
        s.x.copy_from_slice(&p[l.b_in..l.b_in + h]);
        matvec_acc(&p[l.w_in..l.w_in + h * k], z, &mut s.x);

        // Pre-activations: ax = Wx x + b, ah = Wh h.
        let g = l.gate_rows();
        s.ax.copy_from_slice(&p[l.b_gate..l.b_gate + g]);
        matvec_acc(&p[l.w_x..l.w_x + g * h], &s.x, &mut s.ax);
        s.ah.iter_mut().for_each(|v| *v = 0.0);
        matvec_acc(&p[l.w_h..l.w_h + g * h], &state.h, &mut s.ah);

        let h_prev = state.h.clone();
        let c_prev = state.c.clone();
        match l.cell {
            CellKind::Rnn => {
                for j in 0..h {
                    s.act[j] = (s.ax[j] + s.ah[j]).tanh();
                    state.h[j] = s.act[j];
                }
            }
            CellKind::Gru => {
                for j in 0..h {
                    let zg = sigmoid(s.ax[j] + s.ah[j]);
                    let rg = sigmoid(s.ax[h + j] + s.ah[h + j]);
                    let ng = (s.ax[2 * h + j] + rg * s.ah[2 * h + j]).tanh();
                    s.act[j] = zg;
                    s.act[h + j] = rg;
                    s.act[2 * h + j] = ng;
                    state.h[j] = (1.0 - zg) * h_prev[j] + zg * ng;
                }
            }
            CellKind::Lstm => {
                for j in 0..h {
                    let ig = sigmoid(s.ax[j] + s.ah[j]);
                    let fg = sigmoid(s.ax[h + j] + s.ah[h + j]);
                    let gg = (s.ax[2 * h + j] + s.ah[2 * h + j]).tanh();
                    let og = sigmoid(s.ax[3 * h + j] + s.ah[3 * h + j]);
                    s.act[j] = ig;
                    s.act[h + j] = fg;
                    s.act[2 * h + j] = gg;
                    s.act[3 * h + j] = og;
                    let c = fg * c_prev[j] + ig * gg;
                    state.c[j] = c;
                    state.h[j] = og * c.tanh();
                }
            }
        }
        let logit = p[l.b_out]
            + p[l.w_out..l.w_out + h]
                .iter()
                .zip(&state.h)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        if let Some(c) = cache {
            c.z.clear();
            c.z.extend_from_slice(z);
            c.x.clone_from(&s.x);
            c.h_prev = h_prev;
            c.c_prev = c_prev;
            c.act.clone_from(&s.act);
            c.ah.clone_from(&s.ah);
            c.h.clone_from(&state.h);
            c.c.clone_from(&state.c);
        }
        logit
    }
}

/// Reusable per-step buffers.
pub(crate) struct StepScratch {
    x: Vec<f64>,
    ax: Vec<f64>,
    ah: Vec<f64>,
    act: Vec<f64>,
}

impl StepScratch {
    pub(crate) fn new(l: &Layout) -> Self {
        let g = l.gate_rows();
        Self {
            x: vec![0.0; l.hidden_dim],
            ax: vec![0.0; g],
            ah: vec![0.0; g],
            act: vec![0.0; g],
        }
    }
}

/// Sigmoid of a logit, exposed for score pooling.
pub fn probability(logit: f64) -> f64 {
    sigmoid(logit)
}
