//! Adam and its AMSGrad variant, with bias correction.
//!
//! The AMSGrad step divides by the running maximum of the second-moment
//! estimate, so the effective per-coordinate step size never grows.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmsGradConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Keep the elementwise maximum of the second moment (AMSGrad); plain
    /// Adam when false.
    pub amsgrad: bool,
}

impl AmsGradConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            amsgrad: true,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            amsgrad: false,
            ..Self::new(learning_rate)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmsGradState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub v_max: Vec<f64>,
}

impl AmsGradState {
    pub fn zeros(n: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            v_max: vec![0.0; n],
        }
    }
}

/// One descent step `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
/// To ascend an objective, pass its negated gradient.
pub fn amsgrad_step(cfg: &AmsGradConfig, params: &mut [f64], grads: &[f64], state: &mut AmsGradState) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2_sqrt = (1.0 - cfg.beta2.powi(t)).sqrt();
    let step_size = cfg.learning_rate / bc1;
    for i in 0..params.len() {
        let g = grads[i];
        let m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let denom_v = if cfg.amsgrad {
            state.v_max[i] = state.v_max[i].max(v);
            state.v_max[i]
        } else {
            v
        };
        params[i] -= step_size * m / (denom_v.sqrt() / bc2_sqrt + cfg.epsilon);
    }
}
