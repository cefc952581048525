//! Amortized approximate posterior `q(z | x) = N(mu(x), diag(sigma(x)^2))`.
//!
//! A response pattern is one-hot encoded item by item, passed through a
//! small ELU network, and the `2P` outputs are read as `(mu, log sigma)`.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IfaError, Result};
use crate::mlp::{Activation, Input, Mlp, Trace};
use crate::rng::Rng;

const CHECKPOINT_FORMAT: &str = "ifa-inference-net";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorParams {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl PosteriorParams {
    /// The prior `N(0, I)`.
    pub fn standard(p: usize) -> Self {
        Self {
            mu: vec![0.0; p],
            log_sigma: vec![0.0; p],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// `z = mu + sigma * eps`.
pub fn reparameterize(post: &PosteriorParams, eps: &[f64]) -> Vec<f64> {
    post.mu
        .iter()
        .zip(&post.log_sigma)
        .zip(eps)
        .map(|((m, ls), e)| m + ls.exp() * e)
        .collect()
}

/// Pulls `dF/dz` back through the reparameterization:
/// `dF/dmu = dF/dz`, `dF/dlog sigma = dF/dz * sigma * eps`.
pub fn reparameterize_backward(post: &PosteriorParams, eps: &[f64], dz: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d_log_sigma = dz
        .iter()
        .zip(&post.log_sigma)
        .zip(eps)
        .map(|((d, ls), e)| d * ls.exp() * e)
        .collect();
    (dz.to_vec(), d_log_sigma)
}

/// Log-density of the isotropic normal `N(z | mu, sigma^2 I)`.
pub fn log_q(z: &[f64], post: &PosteriorParams) -> f64 {
    let half_ln_2pi = 0.5 * (2.0 * PI).ln();
    z.iter()
        .zip(&post.mu)
        .zip(&post.log_sigma)
        .map(|((z, m), ls)| {
            let u = (z - m) * (-ls).exp();
            -half_ln_2pi - ls - 0.5 * u * u
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceNet {
    categories: Vec<usize>,
    offsets: Vec<usize>,
    factors: usize,
    net: Mlp,
}

/// Default hidden layout: one layer of width `2J`.
pub fn default_hidden(items: usize) -> Vec<usize> {
    vec![(2 * items).max(1)]
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    categories: Vec<usize>,
    factors: usize,
    network: Mlp,
}

impl InferenceNet {
    fn assemble(categories: Vec<usize>, factors: usize, net: Mlp) -> Self {
        let offsets = categories
            .iter()
            .scan(0, |acc, &k| {
                let o = *acc;
                *acc += k;
                Some(o)
            })
            .collect();
        Self {
            categories,
            offsets,
            factors,
            net,
        }
    }

    fn layout(categories: &[usize], factors: usize, hidden: &[usize]) -> Result<(Vec<usize>, Vec<Activation>)> {
        if factors == 0 {
            return Err(IfaError::InvalidArgument(
                "an inference network needs at least one factor".into(),
            ));
        }
        if categories.is_empty() {
            return Err(IfaError::InvalidArgument(
                "an inference network needs at least one item".into(),
            ));
        }
        let mut sizes = vec![categories.iter().sum()];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * factors);
        let mut acts = vec![Activation::Elu; hidden.len()];
        acts.push(Activation::Identity);
        Ok((sizes, acts))
    }

    /// Xavier-uniform weights, zero biases.
    pub fn new(categories: Vec<usize>, factors: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let (sizes, acts) = Self::layout(&categories, factors, hidden)?;
        Ok(Self::assemble(categories, factors, Mlp::xavier(sizes, acts, rng)?))
    }

    /// All weights and biases zero: every pattern maps to `N(0, I)`.
    pub fn zeros(categories: Vec<usize>, factors: usize, hidden: &[usize]) -> Result<Self> {
        let (sizes, acts) = Self::layout(&categories, factors, hidden)?;
        Ok(Self::assemble(categories, factors, Mlp::zeros(sizes, acts)?))
    }

    pub fn factors(&self) -> usize {
        self.factors
    }

    pub fn categories(&self) -> &[usize] {
        &self.categories
    }

    pub fn hidden(&self) -> &[usize] {
        let s = self.net.sizes();
        &s[1..s.len() - 1]
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        self.net.set_params(params)
    }

    pub(crate) fn network(&self) -> &Mlp {
        &self.net
    }

    /// Active one-hot positions for a response pattern.
    pub fn one_hot(&self, x: &[u16], out: &mut Vec<usize>) -> Result<()> {
        if x.len() != self.categories.len() {
            return Err(IfaError::Dimension(format!(
                "pattern has {} entries, network expects {} items",
                x.len(),
                self.categories.len()
            )));
        }
        out.clear();
        for (j, ((&c, &k), &o)) in x.iter().zip(&self.categories).zip(&self.offsets).enumerate() {
            if c as usize >= k {
                return Err(IfaError::CategoryOutOfRange {
                    row: 0,
                    item: j,
                    code: c as i64,
                    categories: k,
                });
            }
            out.push(o + c as usize);
        }
        Ok(())
    }

    pub fn new_trace(&self) -> NetTrace {
        NetTrace {
            trace: self.net.new_trace(),
            active: Vec::with_capacity(self.categories.len()),
        }
    }

    /// Forward pass that records what [`InferenceNet::backward`] needs.
    pub fn encode_traced(&self, x: &[u16], trace: &mut NetTrace) -> Result<PosteriorParams> {
        self.one_hot(x, &mut trace.active)?;
        let out = self.net.forward(Input::OneHot(&trace.active), &mut trace.trace)?;
        let (mu, ls) = out.split_at(self.factors);
        Ok(PosteriorParams {
            mu: mu.to_vec(),
            log_sigma: ls.to_vec(),
        })
    }

    pub fn encode(&self, x: &[u16]) -> Result<PosteriorParams> {
        self.encode_traced(x, &mut self.new_trace())
    }

    /// Accumulates into `grad` the gradient of a scalar whose sensitivities
    /// to `mu` and `log sigma` for the traced pattern are given.
    pub fn backward(&self, trace: &mut NetTrace, d_mu: &[f64], d_log_sigma: &[f64], grad: &mut [f64]) -> Result<()> {
        if d_mu.len() != self.factors || d_log_sigma.len() != self.factors {
            return Err(IfaError::Dimension(format!(
                "sensitivities must have length {} each",
                self.factors
            )));
        }
        let mut d_out = Vec::with_capacity(2 * self.factors);
        d_out.extend_from_slice(d_mu);
        d_out.extend_from_slice(d_log_sigma);
        self.net.backward(&mut trace.trace, &d_out, grad)
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            categories: self.categories.clone(),
            factors: self.factors,
            network: self.net.clone(),
        };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(IfaError::InvalidArgument(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let (sizes, acts) = Self::layout(
            &ck.categories,
            ck.factors,
            &ck.network.sizes()[1..ck.network.sizes().len() - 1],
        )?;
        if sizes != ck.network.sizes() || acts != ck.network.activations() {
            return Err(IfaError::InvalidArgument(
                "checkpoint architecture does not match its header".into(),
            ));
        }
        let expected: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if ck.network.n_params() != expected {
            return Err(IfaError::InvalidArgument(
                "checkpoint has the wrong number of parameters".into(),
            ));
        }
        Ok(Self::assemble(ck.categories, ck.factors, ck.network))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub struct NetTrace {
    trace: Trace,
    active: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_network_gives_standard_normal() {
        let net = InferenceNet::zeros(vec![2, 3], 2, &[4]).unwrap();
        assert_eq!(net.encode(&[1, 2]).unwrap(), PosteriorParams::standard(2));
    }

    #[test]
    fn single_linear_layer_selects_weight_rows() {
        let mut net = InferenceNet::zeros(vec![2, 3], 1, &[]).unwrap();
        // weights are (5 inputs) x (2 outputs) row-major, then 2 biases
        let params: Vec<f64> = (0..12).map(|i| i as f64).collect();
        net.set_params(params).unwrap();
        // pattern (1, 0) activates inputs 1 and 2
        let post = net.encode(&[1, 0]).unwrap();
        assert_eq!(post.mu, vec![2.0 + 4.0 + 10.0]);
        assert_eq!(post.log_sigma, vec![3.0 + 5.0 + 11.0]);
    }

    #[test]
    fn out_of_range_pattern() {
        let net = InferenceNet::zeros(vec![2], 1, &[2]).unwrap();
        assert!(matches!(net.encode(&[2]), Err(IfaError::CategoryOutOfRange { .. })));
    }

    #[test]
    fn reparameterization_identities() {
        let post = PosteriorParams {
            mu: vec![0.5, -1.0],
            log_sigma: vec![0.3, -0.2],
        };
        assert_eq!(reparameterize(&post, &[0.0, 0.0]), post.mu);
        let std = PosteriorParams::standard(2);
        assert_eq!(reparameterize(&std, &[0.7, -0.1]), vec![0.7, -0.1]);
        let tight = PosteriorParams {
            mu: vec![0.5],
            log_sigma: vec![-800.0],
        };
        assert_eq!(reparameterize(&tight, &[3.0]), vec![0.5]);
        let (dm, ds) = reparameterize_backward(&post, &[1.5, 2.0], &[1.0, 1.0]);
        assert_eq!(dm, vec![1.0, 1.0]);
        assert_abs_diff_eq!(ds[0], 0.3f64.exp() * 1.5, epsilon = 1e-15);
    }

    #[test]
    fn log_q_matches_coordinate_product() {
        let post = PosteriorParams {
            mu: vec![0.2, -0.4, 1.0],
            log_sigma: vec![0.1, -0.5, 0.3],
        };
        let z = [0.9, -0.1, 0.2];
        let mut prod = 1.0;
        for i in 0..3 {
            let s = post.log_sigma[i].exp();
            prod *= (-(z[i] - post.mu[i]).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt());
        }
        assert_abs_diff_eq!(log_q(&z, &post), prod.ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(
            log_q(&[0.0; 3], &PosteriorParams::standard(3)),
            -1.5 * (2.0 * PI).ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = InferenceNet::new(vec![3, 2, 5], 2, &[6], &mut seeded(11)).unwrap();
        let text = net.to_json().unwrap();
        let back = InferenceNet::from_json(&text).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_json().unwrap(), text);
    }
}
