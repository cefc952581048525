//! Minimal dense feed-forward network with hand-written reverse mode.
//!
//! Parameters live in one flat vector so that optimizers treat the network
//! like any other parameter block. Weights are stored row-per-input
//! (`in x out`), which makes a sparse one-hot first layer a sum of rows.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{IfaError, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Elu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    /// Derivative given the pre-activation `x` and the output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
        }
    }
}

/// Network input: either dense features or the active indices of a
/// binary (one-hot) vector.
#[derive(Clone, Copy, Debug)]
pub enum Input<'a> {
    Dense(&'a [f64]),
    OneHot(&'a [usize]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    pub(crate) params: Vec<f64>,
}

/// Per-row activations recorded by [`Mlp::forward`].
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    dense_input: Vec<f64>,
    one_hot: Vec<usize>,
    is_one_hot: bool,
    ready: bool,
    scratch: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    /// `sizes` lists layer widths from input to output; `activations` has
    /// one entry per non-input layer.
    pub fn zeros(sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(IfaError::InvalidArgument(format!(
                "network needs at least two layer sizes and one activation per layer (got {} sizes, {} activations)",
                sizes.len(),
                activations.len()
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(IfaError::InvalidArgument("layer widths must be positive".into()));
        }
        let n: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes,
            activations,
            params: vec![0.0; n],
        })
    }

    /// Xavier (Glorot) uniform weights, zero biases.
    pub fn xavier(sizes: Vec<usize>, activations: Vec<Activation>, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(sizes, activations)?;
        for l in 0..net.n_layers() {
            let (fan_in, fan_out) = (net.sizes[l], net.sizes[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (w, _) = net.layer_offsets(l);
            for v in &mut net.params[w..w + fan_in * fan_out] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn n_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(IfaError::Dimension(format!(
                "{} parameters supplied, network has {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    /// Offsets of layer `l`'s weight block and bias block.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.sizes.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.sizes[l] * self.sizes[l + 1])
    }

    /// Mask of parameters that are weights (as opposed to biases).
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.params.len()];
        for l in 0..self.n_layers() {
            let (w, b) = self.layer_offsets(l);
            mask[w..b].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    pub fn new_trace(&self) -> Trace {
        Trace {
            pre: self.sizes[1..].iter().map(|&s| vec![0.0; s]).collect(),
            post: self.sizes[1..].iter().map(|&s| vec![0.0; s]).collect(),
            ..Trace::default()
        }
    }

    pub fn forward<'t>(&self, input: Input<'_>, trace: &'t mut Trace) -> Result<&'t [f64]> {
        if trace.pre.len() != self.n_layers() {
            *trace = self.new_trace();
        }
        trace.ready = false;
        let n_in = self.sizes[0];
        match input {
            Input::Dense(x) => {
                if x.len() != n_in {
                    return Err(IfaError::Dimension(format!(
                        "input has width {}, network expects {n_in}",
                        x.len()
                    )));
                }
                trace.is_one_hot = false;
                trace.dense_input.clear();
                trace.dense_input.extend_from_slice(x);
            }
            Input::OneHot(idx) => {
                if let Some(&bad) = idx.iter().find(|&&i| i >= n_in) {
                    return Err(IfaError::Dimension(format!(
                        "one-hot index {bad} outside input width {n_in}"
                    )));
                }
                trace.is_one_hot = true;
                trace.one_hot.clear();
                trace.one_hot.extend_from_slice(idx);
            }
        }
        for l in 0..self.n_layers() {
            let (w_off, b_off) = self.layer_offsets(l);
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[w_off..b_off];
            let (done, rest) = trace.pre.split_at_mut(l);
            let _ = done;
            let z = &mut rest[0];
            z.copy_from_slice(&self.params[b_off..b_off + n_out]);
            if l == 0 && trace.is_one_hot {
                for &i in &trace.one_hot {
                    for (zo, wo) in z.iter_mut().zip(&w[i * n_out..(i + 1) * n_out]) {
                        *zo += wo;
                    }
                }
            } else {
                let a: &[f64] = if l == 0 { &trace.dense_input } else { &trace.post[l - 1] };
                for i in 0..n_in {
                    let ai = a[i];
                    if ai == 0.0 {
                        continue;
                    }
                    for (zo, wo) in z.iter_mut().zip(&w[i * n_out..(i + 1) * n_out]) {
                        *zo += ai * wo;
                    }
                }
            }
            let act = self.activations[l];
            let (pre, post) = (&trace.pre[l], &mut trace.post[l]);
            for (y, &x) in post.iter_mut().zip(pre) {
                *y = act.apply(x);
            }
        }
        trace.ready = true;
        Ok(trace.output())
    }

    /// Accumulates `d(loss)/d(params)` into `grad`, given the sensitivity
    /// of the loss to the network output recorded in `trace`.
    pub fn backward(&self, trace: &mut Trace, d_out: &[f64], grad: &mut [f64]) -> Result<()> {
        if !trace.ready {
            return Err(IfaError::NoForwardPass);
        }
        if d_out.len() != self.output_width() || grad.len() != self.params.len() {
            return Err(IfaError::Dimension(
                "backward: sensitivity or gradient buffer has the wrong size".into(),
            ));
        }
        let mut delta = std::mem::take(&mut trace.scratch);
        delta.clear();
        delta.extend_from_slice(d_out);
        for l in (0..self.n_layers()).rev() {
            let (w_off, b_off) = self.layer_offsets(l);
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = self.activations[l];
            for ((d, &x), &y) in delta.iter_mut().zip(&trace.pre[l]).zip(&trace.post[l]) {
                *d *= act.derivative(x, y);
            }
            for (g, d) in grad[b_off..b_off + n_out].iter_mut().zip(&delta) {
                *g += d;
            }
            if l == 0 && trace.is_one_hot {
                for &i in &trace.one_hot {
                    for (g, d) in grad[w_off + i * n_out..w_off + (i + 1) * n_out].iter_mut().zip(&delta) {
                        *g += d;
                    }
                }
                break;
            }
            let a: &[f64] = if l == 0 { &trace.dense_input } else { &trace.post[l - 1] };
            for i in 0..n_in {
                let ai = a[i];
                if ai != 0.0 {
                    for (g, d) in grad[w_off + i * n_out..w_off + (i + 1) * n_out].iter_mut().zip(&delta) {
                        *g += ai * d;
                    }
                }
            }
            if l > 0 {
                let w = &self.params[w_off..b_off];
                let next: Vec<f64> = (0..n_in)
                    .map(|i| {
                        w[i * n_out..(i + 1) * n_out]
                            .iter()
                            .zip(&delta)
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect();
                delta.clear();
                delta.extend_from_slice(&next);
            }
        }
        trace.scratch = delta;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn loss(net: &Mlp, input: Input<'_>, weights: &[f64]) -> f64 {
        let mut t = net.new_trace();
        net.forward(input, &mut t)
            .unwrap()
            .iter()
            .zip(weights)
            .map(|(a, b)| a * b)
            .sum()
    }

    fn fd_check(net: &mut Mlp, input: Input<'_>) {
        let out_w: Vec<f64> = (0..net.output_width()).map(|k| 0.3 + 0.7 * k as f64).collect();
        let mut t = net.new_trace();
        net.forward(input, &mut t).unwrap();
        let mut grad = vec![0.0; net.n_params()];
        net.backward(&mut t, &out_w, &mut grad).unwrap();
        let h = 1e-6;
        for i in 0..net.n_params() {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let up = loss(net, input, &out_w);
            net.params[i] = orig - h;
            let dn = loss(net, input, &out_w);
            net.params[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "param {i}: fd {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(4);
        let mut net = Mlp::xavier(vec![5, 4, 3], vec![Activation::Elu, Activation::Identity], &mut rng).unwrap();
        for v in net.params_mut() {
            *v += 0.1;
        }
        fd_check(&mut net, Input::Dense(&[0.2, -1.0, 0.5, 0.0, 1.3]));
        fd_check(&mut net, Input::OneHot(&[0, 3]));
        let mut relu = Mlp::xavier(vec![3, 6, 1], vec![Activation::Relu, Activation::Identity], &mut rng).unwrap();
        fd_check(&mut relu, Input::Dense(&[0.4, -0.3, 0.9]));
    }

    #[test]
    fn one_hot_matches_dense() {
        let mut rng = seeded(1);
        let net = Mlp::xavier(vec![4, 3, 2], vec![Activation::Elu, Activation::Identity], &mut rng).unwrap();
        let mut t = net.new_trace();
        let a = net.forward(Input::OneHot(&[1, 2]), &mut t).unwrap().to_vec();
        let b = net
            .forward(Input::Dense(&[0.0, 1.0, 1.0, 0.0]), &mut t)
            .unwrap()
            .to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn backward_needs_forward() {
        let net = Mlp::zeros(vec![2, 1], vec![Activation::Identity]).unwrap();
        let mut t = net.new_trace();
        let mut g = vec![0.0; net.n_params()];
        assert!(matches!(
            net.backward(&mut t, &[1.0], &mut g),
            Err(IfaError::NoForwardPass)
        ));
    }
}
