//! Binary cross-entropy and exact backpropagation through time.

use serde::{Deserialize, Serialize};

use super::{sigmoid, CellKind, RecurrentModel, StepScratch};
use crate::error::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Loss on the last step's logit only.
    FinalStep,
    /// Mean loss over the steps at or after the warm-up boundary.
    PerStepMean,
}

/// Numerically stable binary cross-entropy on a logit:
/// `max(z, 0) − z·y + ln(1 + e^{−|z|})`.
pub fn bce(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

/// First step that contributes to a per-step loss. At least the final
/// step always counts.
fn first_scored(len: usize, warmup: usize) -> usize {
    warmup.min(len - 1)
}

/// Sequence loss for per-step `labels`. `warmup` leading steps are
/// excluded in [`LossMode::PerStepMean`].
pub fn bce_loss(
    logits: &[f64],
    labels: &[f64],
    mode: LossMode,
    warmup: usize,
) -> Result<f64, ModelError> {
    if logits.len() != labels.len() {
        return Err(ModelError::Dimension(format!(
            "{} logits vs {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if logits.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    let t = logits.len();
    Ok(match mode {
        LossMode::FinalStep => bce(logits[t - 1], labels[t - 1]),
        LossMode::PerStepMean => {
            let start = first_scored(t, warmup);
            let n = (t - start) as f64;
            logits[start..]
                .iter()
                .zip(&labels[start..])
                .map(|(&z, &y)| bce(z, y))
                .sum::<f64>()
                / n
        }
    })
}

/// dLoss/dlogit per step.
fn logit_grads(logits: &[f64], labels: &[f64], mode: LossMode, warmup: usize) -> Vec<f64> {
    let t = logits.len();
    let mut d = vec![0.0; t];
    match mode {
        LossMode::FinalStep => d[t - 1] = sigmoid(logits[t - 1]) - labels[t - 1],
        LossMode::PerStepMean => {
            let start = first_scored(t, warmup);
            let n = (t - start) as f64;
            for i in start..t {
                d[i] = (sigmoid(logits[i]) - labels[i]) / n;
            }
        }
    }
    d
}

/// Gradient buffer with the same flat indexing as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct StepCache {
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub act: Vec<f64>,
    pub ah: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// `out += Wᵀ v` for row-major `W` of shape `v.len() × out.len()`.
fn matvec_t_acc(w: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (row, &vi) in w.chunks_exact(cols).zip(v) {
        if vi == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * vi;
        }
    }
}

/// `dw += a bᵀ`.
fn outer_acc(dw: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (row, &ai) in dw.chunks_exact_mut(cols).zip(a) {
        if ai == 0.0 {
            continue;
        }
        for (d, bj) in row.iter_mut().zip(b) {
            *d += ai * bj;
        }
    }
}

impl RecurrentModel {
    /// Loss and exact BPTT gradients for one sequence of raw features.
    pub fn backward(
        &self,
        features: &[Vec<f64>],
        labels: &[f64],
        mode: LossMode,
        warmup: usize,
    ) -> Result<(f64, Gradients), ModelError> {
        if features.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let mut inputs = Vec::with_capacity(features.len());
        for (t, f) in features.iter().enumerate() {
            if f.len() != self.input_dim() {
                return Err(ModelError::Dimension(format!(
                    "step {t}: expected {} features, got {}",
                    self.input_dim(),
                    f.len()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite { step: t });
            }
            let mut z = vec![0.0; f.len()];
            self.norm.apply(f, &mut z);
            inputs.push(z);
        }
        self.backward_normalized(&inputs, labels, mode, warmup)
    }

    pub(crate) fn backward_normalized(
        &self,
        inputs: &[Vec<f64>],
        labels: &[f64],
        mode: LossMode,
        warmup: usize,
    ) -> Result<(f64, Gradients), ModelError> {
        if inputs.len() != labels.len() {
            return Err(ModelError::Dimension(format!(
                "{} steps vs {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if inputs.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let l = self.layout;
        let (k, h) = (l.input_dim, l.hidden_dim);
        let g = l.gate_rows();
        let p = &self.params;

        let mut state = self.initial_state();
        let mut scratch = StepScratch::new(&l);
        let mut caches = vec![StepCache::default(); inputs.len()];
        let mut logits = Vec::with_capacity(inputs.len());
        for (z, cache) in inputs.iter().zip(caches.iter_mut()) {
            logits.push(self.step_normalized(z, &mut state, &mut scratch, Some(cache)));
        }
        let loss = bce_loss(&logits, labels, mode, warmup)?;
        let dlogits = logit_grads(&logits, labels, mode, warmup);

        let mut grad = Gradients::zeros(l.total);
        let gv = &mut grad.values;
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dh = vec![0.0; h];
        let mut da_x = vec![0.0; g];
        let mut da_h = vec![0.0; g];
        let mut dx = vec![0.0; h];

        for t in (0..inputs.len()).rev() {
            let c = &caches[t];
            let dl = dlogits[t];
            gv[l.b_out] += dl;
            for j in 0..h {
                gv[l.w_out + j] += dl * c.h[j];
                dh[j] = dh_next[j] + dl * p[l.w_out + j];
            }
            let mut dh_prev_direct = vec![0.0; h];
            match l.cell {
                CellKind::Rnn => {
                    for j in 0..h {
                        let a = c.act[j];
                        da_x[j] = dh[j] * (1.0 - a * a);
                        da_h[j] = da_x[j];
                    }
                }
                CellKind::Gru => {
                    for j in 0..h {
                        let (zg, rg, ng) = (c.act[j], c.act[h + j], c.act[2 * h + j]);
                        let u = c.ah[2 * h + j];
                        let dn = dh[j] * zg;
                        let dz = dh[j] * (ng - c.h_prev[j]);
                        dh_prev_direct[j] = dh[j] * (1.0 - zg);
                        let dan = dn * (1.0 - ng * ng);
                        let dr = dan * u;
                        let daz = dz * zg * (1.0 - zg);
                        let dar = dr * rg * (1.0 - rg);
                        da_x[j] = daz;
                        da_x[h + j] = dar;
                        da_x[2 * h + j] = dan;
                        da_h[j] = daz;
                        da_h[h + j] = dar;
                        da_h[2 * h + j] = dan * rg;
                    }
                }
                CellKind::Lstm => {
                    for j in 0..h {
                        let (ig, fg, gg, og) =
                            (c.act[j], c.act[h + j], c.act[2 * h + j], c.act[3 * h + j]);
                        let tc = c.c[j].tanh();
                        let dc = dc_next[j] + dh[j] * og * (1.0 - tc * tc);
                        let dout = dh[j] * tc;
                        da_x[j] = dc * gg * ig * (1.0 - ig);
                        da_x[h + j] = dc * c.c_prev[j] * fg * (1.0 - fg);
                        da_x[2 * h + j] = dc * ig * (1.0 - gg * gg);
                        da_x[3 * h + j] = dout * og * (1.0 - og);
                        dc_next[j] = dc * fg;
                    }
                    da_h.copy_from_slice(&da_x);
                }
            }

            for (b, d) in gv[l.b_gate..l.b_gate + g].iter_mut().zip(&da_x) {
                *b += d;
            }
            outer_acc(&mut gv[l.w_x..l.w_x + g * h], &da_x, &c.x);
            outer_acc(&mut gv[l.w_h..l.w_h + g * h], &da_h, &c.h_prev);

            dx.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_acc(&p[l.w_x..l.w_x + g * h], &da_x, &mut dx);
            for (b, d) in gv[l.b_in..l.b_in + h].iter_mut().zip(&dx) {
                *b += d;
            }
            outer_acc(&mut gv[l.w_in..l.w_in + h * k], &dx, &c.z);

            dh_next.copy_from_slice(&dh_prev_direct);
            matvec_t_acc(&p[l.w_h..l.w_h + g * h], &da_h, &mut dh_next);
        }
        Ok((loss, grad))
    }
}
