//! One-hidden-layer ReLU classifier with a logistic output, trained with
//! Adam on the L2-penalized log loss. Defaults follow the usual
//! scikit-learn `MLPClassifier` settings.

use log::debug;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::data::Patterns;
use crate::error::{IfaError, Result};
use crate::iwave::{amsgrad_step, AmsGradConfig, AmsGradState};
use crate::mlp::{Activation, Input, Mlp};
use crate::rng::{derive_seed, seeded, Rng};

/// Weight-decay candidates `10^n`, `n in {-1, -1/2, 0, 1/2, 1}`.
pub fn weight_decay_grid() -> Vec<f64> {
    [-1.0, -0.5, 0.0, 0.5, 1.0]
        .iter()
        .map(|n: &f64| 10f64.powf(*n))
        .collect()
}

/// Epoch cap `floor(10000 * 200 / N_test)`.
pub fn epoch_cap(n_test: usize) -> usize {
    (10_000 * 200 / n_test.max(1)).max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub max_batch: usize,
    /// `None` uses [`epoch_cap`] of the test-set size.
    pub max_epochs: Option<usize>,
    pub tolerance: f64,
    pub patience: usize,
    /// Candidate L2 penalties; a single entry skips tuning.
    pub weight_decays: Vec<f64>,
    pub validation_fraction: f64,
    /// Largest penalty whose validation accuracy is within this margin of
    /// the best is selected.
    pub selection_margin: f64,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            learning_rate: 1e-3,
            max_batch: 200,
            max_epochs: None,
            tolerance: 1e-4,
            patience: 10,
            weight_decays: weight_decay_grid(),
            validation_fraction: 0.25,
            selection_margin: 0.005,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralModel {
    pub network: Mlp,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Validation accuracy per candidate penalty (empty without tuning).
    pub validation: Vec<(f64, f64)>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Glorot-uniform weights and biases. As in scikit-learn, the bound
/// follows the hidden activation on every layer, output included.
fn init_network(inputs: usize, hidden: usize, rng: &mut Rng) -> Result<Mlp> {
    let mut net = Mlp::zeros(vec![inputs, hidden, 1], vec![Activation::Relu, Activation::Identity])?;
    for l in 0..2 {
        let (fan_in, fan_out) = (net.sizes()[l], net.sizes()[l + 1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let (w, b) = net.layer_offsets(l);
        let end = b + fan_out;
        for v in &mut net.params_mut()[w..end] {
            *v = rng.random_range(-bound..bound);
        }
    }
    Ok(net)
}

fn features(x: &Patterns) -> Vec<Vec<f64>> {
    let mut buf = Vec::new();
    (0..x.n_rows())
        .map(|i| {
            x.features(i, &mut buf);
            buf.clone()
        })
        .collect()
}

fn train(
    x: &[Vec<f64>],
    y: &[u8],
    alpha: f64,
    cfg: &NeuralConfig,
    max_epochs: usize,
    rng: &mut Rng,
) -> Result<(Mlp, usize)> {
    let n = x.len();
    if n == 0 {
        return Err(IfaError::EmptyData("no training rows for the neural classifier".into()));
    }
    let mut net = init_network(x[0].len(), cfg.hidden, rng)?;
    let mask = net.weight_mask();
    let opt = AmsGradConfig::adam(cfg.learning_rate);
    let mut state = AmsGradState::zeros(net.n_params());
    let batch = cfg.max_batch.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = net.new_trace();
    let mut grad = vec![0.0; net.n_params()];
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut epochs = 0;
    for _ in 0..max_epochs {
        epochs += 1;
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for &i in chunk {
                let logit = net.forward(Input::Dense(&x[i]), &mut trace)?[0];
                let p = sigmoid(logit);
                let label = y[i] as f64;
                // log loss from the logit: softplus(logit) - label * logit
                loss += logit.max(0.0) + (-logit.abs()).exp().ln_1p() - label * logit;
                net.backward(&mut trace, &[p - label], &mut grad)?;
            }
            let m = chunk.len() as f64;
            let params = net.params();
            let mut penalty = 0.0;
            for ((g, w), &is_w) in grad.iter_mut().zip(params).zip(&mask) {
                if is_w {
                    *g += alpha * w;
                    penalty += w * w;
                }
                *g /= m;
            }
            loss = (loss + 0.5 * alpha * penalty) / m;
            epoch_loss += loss * m;
            amsgrad_step(&opt, net.params_mut(), &grad, &mut state);
        }
        epoch_loss /= n as f64;
        if !epoch_loss.is_finite() {
            return Err(IfaError::Numerical("classifier loss diverged".into()));
        }
        if epoch_loss > best - cfg.tolerance {
            stale += 1;
        } else {
            stale = 0;
        }
        best = best.min(epoch_loss);
        if stale >= cfg.patience {
            break;
        }
    }
    Ok((net, epochs))
}

fn predict_rows(net: &Mlp, x: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut trace = net.new_trace();
    x.iter()
        .map(|row| Ok(sigmoid(net.forward(Input::Dense(row), &mut trace)?[0])))
        .collect()
}

fn accuracy_of(probs: &[f64], labels: &[u8]) -> f64 {
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(p, l)| u8::from(**p > 0.5) == **l)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

impl NeuralModel {
    /// Tunes the penalty on a validation holdout of the training rows,
    /// then refits on all training rows with the selected penalty.
    pub fn fit(train_x: &Patterns, labels: &[u8], n_test: usize, cfg: &NeuralConfig, seed: u64) -> Result<Self> {
        if cfg.weight_decays.is_empty() {
            return Err(IfaError::InvalidArgument("weight-decay grid is empty".into()));
        }
        let x = features(train_x);
        let max_epochs = cfg.max_epochs.unwrap_or_else(|| epoch_cap(n_test));
        let mut validation = Vec::new();
        let alpha = if cfg.weight_decays.len() == 1 {
            cfg.weight_decays[0]
        } else {
            let mut idx: Vec<usize> = (0..x.len()).collect();
            idx.shuffle(&mut seeded(derive_seed(seed, &[0])));
            let n_val = ((x.len() as f64) * cfg.validation_fraction).round() as usize;
            let n_val = n_val.clamp(1, x.len().saturating_sub(1).max(1));
            let (val_idx, fit_idx) = idx.split_at(n_val);
            let fx: Vec<Vec<f64>> = fit_idx.iter().map(|&i| x[i].clone()).collect();
            let fy: Vec<u8> = fit_idx.iter().map(|&i| labels[i]).collect();
            let vx: Vec<Vec<f64>> = val_idx.iter().map(|&i| x[i].clone()).collect();
            let vy: Vec<u8> = val_idx.iter().map(|&i| labels[i]).collect();
            for (c, &alpha) in cfg.weight_decays.iter().enumerate() {
                let mut rng = seeded(derive_seed(seed, &[1, c as u64]));
                let (net, _) = train(&fx, &fy, alpha, cfg, max_epochs, &mut rng)?;
                validation.push((alpha, accuracy_of(&predict_rows(&net, &vx)?, &vy)));
            }
            let best = validation.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
            validation
                .iter()
                .filter(|v| v.1 >= best - cfg.selection_margin)
                .map(|v| v.0)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let mut rng = seeded(derive_seed(seed, &[2]));
        let (network, epochs) = train(&x, labels, alpha, cfg, max_epochs, &mut rng)?;
        debug!("neural classifier: weight decay {alpha}, {epochs} epochs");
        Ok(Self {
            network,
            weight_decay: alpha,
            epochs,
            validation,
        })
    }

    pub fn predict(&self, test: &Patterns) -> Result<Vec<f64>> {
        if test.n_cols() != self.network.input_width() {
            return Err(IfaError::Dimension(format!(
                "classifier expects {} features, rows have {}",
                self.network.input_width(),
                test.n_cols()
            )));
        }
        predict_rows(&self.network, &features(test))
    }
}
