//! Importance-weighted ELBO and its gradient estimators.
//!
//! For one observation with posterior `q = N(mu, sigma^2 I)` and draws
//! `z_r = mu + sigma * eps_r`, the log-weights are
//! `log w_r = log p(x | z_r) + log N(z_r | 0, Sigma) - log q(z_r)` and the
//! estimate is `logsumexp(log w) - ln R`. All weight arithmetic stays in
//! log space; normalized weights are `exp(log w_r - logsumexp)`.
//!
//! Model gradients use the normalized weights. Network gradients use
//! either the doubly reparameterized estimator (squared normalized weights,
//! path derivative only) or the plain pathwise gradient of the estimate.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{IfaError, Result};
use crate::grm::{
    angle_gradient, pull_back_intercepts, ItemParams, LowerTriangular, Materialized, ModelSpec, ParameterSet,
    ResponseMatrix,
};
use crate::inference_net::{log_q, InferenceNet, NetTrace, PosteriorParams};
use crate::rng::{seeded, Rng};

const MIN_CHOLESKY_DIAGONAL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiEstimator {
    /// Doubly reparameterized: `sum_r w~_r^2 (d log w_r / dz_r)(dz_r / dpsi)`.
    #[default]
    Dreg,
    /// Total pathwise derivative of the IW-ELBO estimate.
    Pathwise,
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `w~_r = exp(log w_r - logsumexp(log w))`.
pub fn normalized_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(log_w);
    if !lse.is_finite() {
        return Err(IfaError::DegenerateWeights);
    }
    Ok(log_w.iter().map(|l| (l - lse).exp()).collect())
}

fn check_cholesky(l: &LowerTriangular) -> Result<()> {
    if l.dim() > 0 && !(l.min_abs_diagonal() > MIN_CHOLESKY_DIAGONAL) {
        return Err(IfaError::SingularCorrelation);
    }
    Ok(())
}

/// `log N(z | 0, L L^T)`.
pub fn log_prior(z: &[f64], cholesky: &LowerTriangular) -> Result<f64> {
    check_cholesky(cholesky)?;
    let mut y = vec![0.0; z.len()];
    cholesky.solve(z, &mut y);
    let p = z.len() as f64;
    Ok(-0.5 * p * (2.0 * PI).ln() - cholesky.log_abs_det() - 0.5 * y.iter().map(|v| v * v).sum::<f64>())
}

/// Unnormalized log importance weight of one draw.
pub fn log_weight(
    x: &[u16],
    z: &[f64],
    items: &[ItemParams],
    cholesky: &LowerTriangular,
    post: &PosteriorParams,
) -> Result<f64> {
    let ll = crate::grm::log_cond_likelihood(x, items, z)?;
    Ok(ll + log_prior(z, cholesky)? - log_q(z, post))
}

/// Gradients in model (materialized) coordinates.
#[derive(Clone, Debug)]
pub struct ModelGradient {
    pub intercepts: Vec<Vec<f64>>,
    pub loadings: Vec<Vec<f64>>,
    pub cholesky: LowerTriangular,
}

impl ModelGradient {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            intercepts: spec.categories.iter().map(|k| vec![0.0; k - 1]).collect(),
            loadings: vec![vec![0.0; spec.factors]; spec.n_items()],
            cholesky: LowerTriangular::zeros(spec.factors),
        }
    }

    fn clear(&mut self) {
        self.intercepts.iter_mut().flatten().for_each(|v| *v = 0.0);
        self.loadings.iter_mut().flatten().for_each(|v| *v = 0.0);
        self.cholesky = LowerTriangular::zeros(self.cholesky.dim());
    }

    /// Chain rule to the flat optimizer layout of [`ParameterSet::to_flat`]:
    /// softplus increments for intercepts, `A_j^T` for loadings and the
    /// hyperspherical map for the free angles.
    pub fn pull_back(&self, spec: &ModelSpec, params: &ParameterSet) -> Vec<f64> {
        let mut out = Vec::with_capacity(params.flat_len(spec));
        for (raw, d_alpha) in params.intercepts.iter().zip(&self.intercepts) {
            out.extend(pull_back_intercepts(raw, d_alpha));
        }
        let mut d_free = vec![0.0; spec.free_loadings];
        for (c, g) in spec.constraints.iter().zip(&self.loadings) {
            c.pull_back(g, &mut d_free);
        }
        out.extend(d_free);
        if spec.n_free_angles() > 0 {
            let d_angles = angle_gradient(&params.angles, &self.cholesky);
            out.extend(
                d_angles
                    .iter()
                    .zip(&spec.correlation.fixed)
                    .filter(|(_, f)| f.is_none())
                    .map(|(g, _)| *g),
            );
        }
        out
    }
}

/// Estimator settings for a batch evaluation.
#[derive(Clone, Copy, Debug)]
pub struct Sampling {
    pub iw_samples: usize,
    pub mc_samples: usize,
    pub estimator: PsiEstimator,
}

impl Sampling {
    pub fn new(iw_samples: usize) -> Self {
        Self {
            iw_samples,
            mc_samples: 1,
            estimator: PsiEstimator::Dreg,
        }
    }
}

/// Reusable buffers for per-observation evaluation.
pub struct Workspace {
    trace: NetTrace,
    eps: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
    u: Vec<f64>,
    ll_dz: Vec<f64>,
    log_w: Vec<f64>,
    terms: Vec<(f64, f64)>,
    d_mu: Vec<f64>,
    d_ls: Vec<f64>,
}

impl Workspace {
    pub fn new(spec: &ModelSpec, net: &InferenceNet, s: Sampling) -> Self {
        let (p, r, j) = (spec.factors, s.iw_samples, spec.n_items());
        Self {
            trace: net.new_trace(),
            eps: vec![0.0; s.mc_samples * r * p],
            z: vec![0.0; r * p],
            y: vec![0.0; r * p],
            u: vec![0.0; r * p],
            ll_dz: vec![0.0; r * p],
            log_w: vec![0.0; r],
            terms: vec![(0.0, 0.0); r * j],
            d_mu: vec![0.0; p],
            d_ls: vec![0.0; p],
        }
    }

    /// Noise used by the last evaluated observation, `S x R x P`.
    pub fn eps(&self) -> &[f64] {
        &self.eps
    }
}

pub struct Evaluator<'a> {
    pub spec: &'a ModelSpec,
    pub model: &'a Materialized,
    pub net: &'a InferenceNet,
    pub sampling: Sampling,
}

/// Gradient accumulators for a batch.
pub struct Accumulators {
    pub model: ModelGradient,
    pub psi: Vec<f64>,
}

impl Accumulators {
    pub fn zeros(spec: &ModelSpec, net: &InferenceNet) -> Self {
        Self {
            model: ModelGradient::zeros(spec),
            psi: vec![0.0; net.n_params()],
        }
    }

    pub fn clear(&mut self) {
        self.model.clear();
        self.psi.iter_mut().for_each(|v| *v = 0.0);
    }
}

impl<'a> Evaluator<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        model: &'a Materialized,
        net: &'a InferenceNet,
        sampling: Sampling,
    ) -> Result<Self> {
        if sampling.iw_samples == 0 || sampling.mc_samples == 0 {
            return Err(IfaError::InvalidArgument("R and S must be at least 1".into()));
        }
        if spec.factors == 0 || net.factors() != spec.factors {
            return Err(IfaError::Dimension(format!(
                "network has {} factors, spec has {}",
                net.factors(),
                spec.factors
            )));
        }
        check_cholesky(&model.cholesky)?;
        Ok(Self {
            spec,
            model,
            net,
            sampling,
        })
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(self.spec, self.net, self.sampling)
    }

    /// Draws fresh noise for one observation into the workspace.
    pub fn draw_noise(&self, ws: &mut Workspace, rng: &mut Rng) {
        for e in ws.eps.iter_mut() {
            *e = StandardNormal.sample(rng);
        }
    }

    /// IW-ELBO estimate for one observation using the noise in `ws`,
    /// averaged over the `S` groups. With `acc`, gradients are added to it.
    pub fn observation(&self, x: &[u16], ws: &mut Workspace, mut acc: Option<&mut Accumulators>) -> Result<f64> {
        let p = self.spec.factors;
        let r_count = self.sampling.iw_samples;
        let s_count = self.sampling.mc_samples;
        let items = &self.model.items;
        let l = &self.model.cholesky;
        let post = self.net.encode_traced(x, &mut ws.trace)?;
        let sigma: Vec<f64> = post.log_sigma.iter().map(|v| v.exp()).collect();
        let sum_ls: f64 = post.log_sigma.iter().sum();
        let half_ln_2pi = 0.5 * (2.0 * PI).ln();
        let log_prior_const = -(p as f64) * half_ln_2pi - l.log_abs_det();
        let log_q_const = -(p as f64) * half_ln_2pi - sum_ls;
        let scale = 1.0 / s_count as f64;
        ws.d_mu.iter_mut().for_each(|v| *v = 0.0);
        ws.d_ls.iter_mut().for_each(|v| *v = 0.0);
        let j_count = items.len();
        let mut total = 0.0;
        for s in 0..s_count {
            let eps_s = &ws.eps[s * r_count * p..(s + 1) * r_count * p];
            for r in 0..r_count {
                let e = &eps_s[r * p..(r + 1) * p];
                let z = &mut ws.z[r * p..(r + 1) * p];
                for q in 0..p {
                    z[q] = post.mu[q] + sigma[q] * e[q];
                }
                let ll_dz = &mut ws.ll_dz[r * p..(r + 1) * p];
                ll_dz.iter_mut().for_each(|v| *v = 0.0);
                let mut ll = 0.0;
                for (j, (item, &code)) in items.iter().zip(x).enumerate() {
                    let t = item.term(code as usize, item.linear_predictor(z));
                    ll += t.log_prob;
                    ws.terms[r * j_count + j] = (t.d_lower, t.d_upper);
                    let d_lp = t.d_lower + t.d_upper;
                    for (g, b) in ll_dz.iter_mut().zip(&item.loadings) {
                        *g += d_lp * b;
                    }
                }
                let y = &mut ws.y[r * p..(r + 1) * p];
                l.solve(z, y);
                let u = &mut ws.u[r * p..(r + 1) * p];
                l.solve_transpose(y, u);
                let lp = log_prior_const - 0.5 * y.iter().map(|v| v * v).sum::<f64>();
                let lq = log_q_const - 0.5 * e.iter().map(|v| v * v).sum::<f64>();
                ws.log_w[r] = ll + lp - lq;
            }
            let lse = log_sum_exp(&ws.log_w);
            if lse.is_nan() {
                return Err(IfaError::Numerical("importance weight is NaN".into()));
            }
            if !lse.is_finite() {
                return Err(IfaError::DegenerateWeights);
            }
            total += lse - (r_count as f64).ln();
            let Some(acc) = acc.as_deref_mut() else { continue };
            for r in 0..r_count {
                let wt = (ws.log_w[r] - lse).exp();
                let c = wt * scale;
                let z = &ws.z[r * p..(r + 1) * p];
                let e = &eps_s[r * p..(r + 1) * p];
                for (j, &code) in x.iter().enumerate() {
                    let (dl, du) = ws.terms[r * j_count + j];
                    let k = code as usize;
                    let gi = &mut acc.model.intercepts[j];
                    if k > 0 {
                        gi[k - 1] += c * dl;
                    }
                    if k < gi.len() {
                        gi[k] += c * du;
                    }
                    let d_lp = c * (dl + du);
                    for (g, zq) in acc.model.loadings[j].iter_mut().zip(z) {
                        *g += d_lp * zq;
                    }
                }
                let y = &ws.y[r * p..(r + 1) * p];
                let u = &ws.u[r * p..(r + 1) * p];
                for a in 0..p {
                    for b in 0..a {
                        acc.model.cholesky.add(a, b, c * u[a] * y[b]);
                    }
                    acc.model.cholesky.add(a, a, c * (u[a] * y[a] - 1.0 / l.get(a, a)));
                }
                let ll_dz = &ws.ll_dz[r * p..(r + 1) * p];
                match self.sampling.estimator {
                    PsiEstimator::Dreg => {
                        let c2 = wt * wt * scale;
                        for q in 0..p {
                            let gz = ll_dz[q] - u[q] + e[q] / sigma[q];
                            ws.d_mu[q] += c2 * gz;
                            ws.d_ls[q] += c2 * gz * sigma[q] * e[q];
                        }
                    }
                    PsiEstimator::Pathwise => {
                        for q in 0..p {
                            let gz = ll_dz[q] - u[q];
                            ws.d_mu[q] += c * gz;
                            ws.d_ls[q] += c * (gz * sigma[q] * e[q] + 1.0);
                        }
                    }
                }
            }
        }
        if let Some(acc) = acc {
            let (d_mu, d_ls) = (std::mem::take(&mut ws.d_mu), std::mem::take(&mut ws.d_ls));
            let res = self.net.backward(&mut ws.trace, &d_mu, &d_ls, &mut acc.psi);
            ws.d_mu = d_mu;
            ws.d_ls = d_ls;
            res?;
        }
        Ok(total * scale)
    }

    /// Sum over `rows` of per-observation estimates. Noise is drawn from
    /// `rng` row by row, so equal seeds give common random numbers.
    pub fn batch(
        &self,
        data: &ResponseMatrix,
        rows: &[usize],
        rng: &mut Rng,
        mut acc: Option<&mut Accumulators>,
    ) -> Result<f64> {
        let mut ws = self.workspace();
        let mut total = 0.0;
        for &i in rows {
            self.draw_noise(&mut ws, rng);
            total += self.observation(data.row(i), &mut ws, acc.as_deref_mut())?;
        }
        Ok(total)
    }
}

fn all_rows(data: &ResponseMatrix) -> Vec<usize> {
    (0..data.n_rows()).collect()
}

/// Sum over all rows of the IW-ELBO estimate with noise drawn from `seed`.
pub fn iw_elbo_estimate(
    data: &ResponseMatrix,
    spec: &ModelSpec,
    params: &ParameterSet,
    net: &InferenceNet,
    sampling: Sampling,
    seed: u64,
) -> Result<f64> {
    let model = params.materialize(spec)?;
    let ev = Evaluator::new(spec, &model, net, sampling)?;
    ev.batch(data, &all_rows(data), &mut seeded(seed), None)
}

fn gradients(
    data: &ResponseMatrix,
    spec: &ModelSpec,
    params: &ParameterSet,
    net: &InferenceNet,
    sampling: Sampling,
    seed: u64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let model = params.materialize(spec)?;
    let ev = Evaluator::new(spec, &model, net, sampling)?;
    let mut acc = Accumulators::zeros(spec, net);
    let value = ev.batch(data, &all_rows(data), &mut seeded(seed), Some(&mut acc))?;
    Ok((value, acc.model.pull_back(spec, params), acc.psi))
}

/// Estimate and its gradient with respect to the flat model parameters
/// (raw intercepts, free loadings, free angles).
pub fn grad_omega(
    data: &ResponseMatrix,
    spec: &ModelSpec,
    params: &ParameterSet,
    net: &InferenceNet,
    sampling: Sampling,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let (v, g, _) = gradients(data, spec, params, net, sampling, seed)?;
    Ok((v, g))
}

/// Estimate and the doubly reparameterized network gradient.
pub fn grad_psi_dreg(
    data: &ResponseMatrix,
    spec: &ModelSpec,
    params: &ParameterSet,
    net: &InferenceNet,
    sampling: Sampling,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let s = Sampling {
        estimator: PsiEstimator::Dreg,
        ..sampling
    };
    let (v, _, g) = gradients(data, spec, params, net, s, seed)?;
    Ok((v, g))
}

/// Estimate and the total pathwise network gradient.
pub fn grad_psi_pathwise(
    data: &ResponseMatrix,
    spec: &ModelSpec,
    params: &ParameterSet,
    net: &InferenceNet,
    sampling: Sampling,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let s = Sampling {
        estimator: PsiEstimator::Pathwise,
        ..sampling
    };
    let (v, _, g) = gradients(data, spec, params, net, s, seed)?;
    Ok((v, g))
}
