use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backward::{Gradients, LossMode};
use super::{Normalizer, RecurrentModel};
use crate::error::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub gradient_clip: Option<f64>,
    pub loss_mode: LossMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            gradient_clip: Some(1.0),
            loss_mode: LossMode::FinalStep,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.batch_size == 0 {
            return Err("batch_size must be >= 1".into());
        }
        if let Some(c) = self.gradient_clip {
            if !(c > 0.0) {
                return Err(format!("gradient_clip must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// Adam with bias correction and optional global-norm clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    clip: Option<f64>,
}

impl Adam {
    pub fn new(n: usize, config: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.epsilon,
            clip: config.gradient_clip,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        let scale = match self.clip {
            Some(c) => {
                let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] * scale;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// One labelled training sequence of raw feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSequence {
    pub features: Vec<Vec<f64>>,
    /// Per-step targets in {0, 1}.
    pub labels: Vec<f64>,
    pub warmup: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub grad_norm: f64,
}

struct Prepared {
    inputs: Vec<Vec<f64>>,
    labels: Vec<f64>,
    warmup: usize,
}

/// Trains `model` in place. Gradients of a batch are computed per sequence
/// (in parallel) and reduced in a fixed order, so a given seed always
/// yields the same trajectory.
pub fn train(
    model: &mut RecurrentModel,
    data: &[TrainSequence],
    config: &TrainConfig,
) -> Result<Vec<EpochStats>, ModelError> {
    config.validate().map_err(ModelError::Dimension)?;
    if data.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    let prepared: Vec<Prepared> = data
        .iter()
        .map(|s| {
            let inputs = s
                .features
                .iter()
                .map(|f| {
                    let mut z = vec![0.0; f.len()];
                    model.norm.apply(f, &mut z);
                    z
                })
                .collect();
            Prepared {
                inputs,
                labels: s.labels.clone(),
                warmup: s.warmup,
            }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Adam::new(model.param_count(), config);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut last_norm = 0.0;
        for batch in order.chunks(config.batch_size) {
            let m = &*model;
            let results: Vec<Result<(f64, Gradients), ModelError>> = batch
                .par_iter()
                .map(|&i| {
                    let p = &prepared[i];
                    m.backward_normalized(&p.inputs, &p.labels, config.loss_mode, p.warmup)
                })
                .collect();
            let mut total = Gradients::zeros(model.param_count());
            for r in results {
                let (loss, g) = r?;
                loss_sum += loss;
                total.add_assign(&g);
            }
            total.scale(1.0 / batch.len() as f64);
            last_norm = total.norm();
            opt.step(&mut model.params, &total.values);
        }
        log.push(EpochStats {
            epoch,
            mean_loss: loss_sum / prepared.len() as f64,
            grad_norm: last_norm,
        });
    }
    Ok(log)
}

/// Fits the model's normalizer on every step of `data`, keeping its mask.
pub fn fit_normalizer(model: &mut RecurrentModel, data: &[TrainSequence]) {
    let mask = model.norm.mask.clone();
    let mut norm = Normalizer::fit(
        model.input_dim(),
        data.iter()
            .flat_map(|s| s.features.iter().map(Vec::as_slice)),
    );
    norm.mask = mask;
    model.norm = norm;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = TrainConfig::default();
        let mut p = vec![1.0, -2.0, 3.0];
        let before = p.clone();
        let mut opt = Adam::new(3, &cfg);
        for _ in 0..10 {
            opt.step(&mut p, &[0.0; 3]);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_steps_are_bounded_by_lr() {
        let cfg = TrainConfig {
            gradient_clip: None,
            ..TrainConfig::default()
        };
        let mut p = vec![0.0];
        let mut opt = Adam::new(1, &cfg);
        let mut prev = 0.0;
        for _ in 0..500 {
            opt.step(&mut p, &[3.7]);
            let delta: f64 = prev - p[0];
            // Bias correction makes m̂ = g and v̂ = g² exactly.
            let expect = cfg.learning_rate * 3.7 / (3.7 + cfg.epsilon);
            assert!((delta - expect).abs() < 1e-12, "{delta}");
            prev = p[0];
        }
    }

    #[test]
    fn quadratic_converges() {
        // f(x, y) = (x − 3)² + 10 (y + 1)²
        let cfg = TrainConfig {
            learning_rate: 0.05,
            gradient_clip: None,
            ..TrainConfig::default()
        };
        let mut p = vec![0.0, 0.0];
        let mut opt = Adam::new(2, &cfg);
        let mut steps = 0;
        while steps < 5000 {
            let g = [2.0 * (p[0] - 3.0), 20.0 * (p[1] + 1.0)];
            opt.step(&mut p, &g);
            steps += 1;
            if (p[0] - 3.0).abs() < 1e-6 && (p[1] + 1.0).abs() < 1e-6 {
                break;
            }
        }
        assert!((p[0] - 3.0).abs() < 1e-6, "{p:?} after {steps}");
        assert!((p[1] + 1.0).abs() < 1e-6, "{p:?} after {steps}");
    }

    #[test]
    fn clipping_rescales_global_norm() {
        let cfg = TrainConfig {
            gradient_clip: Some(1.0),
            beta1: 0.5,
            ..TrainConfig::default()
        };
        let mut a = vec![0.0, 0.0];
        let mut b = vec![0.0, 0.0];
        let mut oa = Adam::new(2, &cfg);
        let mut ob = Adam::new(2, &cfg);
        oa.step(&mut a, &[30.0, 40.0]);
        ob.step(&mut b, &[0.6, 0.8]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            beta1: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
