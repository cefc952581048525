use std::time::Instant;

use log::{debug, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::amsgrad::{amsgrad_step, AmsGradConfig, AmsGradState};
use super::init::init_params;
use super::objective::{Accumulators, Evaluator, PsiEstimator, Sampling};
use crate::error::{IfaError, Result};
use crate::grm::{GeneratingModel, ItemParams, ModelSpec, ParameterSet, ResponseMatrix};
use crate::inference_net::{default_hidden, InferenceNet};
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Importance-weighted samples `R`.
    pub iw_samples: usize,
    /// Monte Carlo groups `S`.
    pub mc_samples: usize,
    /// `None` picks 0.005, or 0.0025 when the model has 10 or more factors.
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Steps per averaging window of the convergence rule.
    pub window: usize,
    /// Consecutive non-improving windows before stopping.
    pub patience: usize,
    /// Minimum improvement of a window mean (per observation).
    pub tolerance: f64,
    pub seed: u64,
    /// Hidden layer widths of the inference network; `None` is one layer
    /// of width `2J`.
    pub hidden: Option<Vec<usize>>,
    pub estimator: PsiEstimator,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iw_samples: 5,
            mc_samples: 1,
            learning_rate: None,
            batch_size: 128,
            max_steps: 50_000,
            window: 100,
            patience: 5,
            tolerance: 1e-3,
            seed: 0,
            hidden: None,
            estimator: PsiEstimator::Dreg,
        }
    }
}

impl FitConfig {
    pub fn learning_rate_for(&self, factors: usize) -> f64 {
        self.learning_rate.unwrap_or(if factors >= 10 { 0.0025 } else { 0.005 })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(IfaError::InvalidArgument(m.into()));
        if self.iw_samples == 0 {
            return bad("iw_samples must be at least 1");
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be at least 1");
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad("learning_rate must be positive");
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.window == 0 || self.patience == 0 {
            return bad("window and patience must be at least 1");
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub params: ParameterSet,
    /// Materialized item parameters.
    pub items: Vec<ItemParams>,
    pub correlation: Vec<Vec<f64>>,
    /// Inference network checkpoint.
    pub network: String,
    /// Per-observation batch IW-ELBO, one entry per step.
    pub trace: Vec<f64>,
    pub steps: usize,
    pub skipped_steps: usize,
    pub converged: bool,
    pub seconds: f64,
    /// Number of estimated model parameters.
    pub n_parameters: usize,
    pub config: FitConfig,
}

impl FitResult {
    pub fn generating_model(&self) -> GeneratingModel {
        GeneratingModel {
            items: self.items.clone(),
            correlation: self.correlation.clone(),
        }
    }

    pub fn inference_net(&self) -> Result<InferenceNet> {
        InferenceNet::from_json(&self.network)
    }

    /// Model loadings as a `J x P` matrix.
    pub fn loadings(&self) -> Vec<Vec<f64>> {
        self.items.iter().map(|i| i.loadings.clone()).collect()
    }

    /// Reflects factors whose loadings disagree in sign with `reference`
    /// (matched by the sum of elementwise products).
    pub fn align_to(&mut self, reference: &[Vec<f64>]) -> Result<()> {
        let p = self.spec.factors;
        for q in 0..p {
            let dot: f64 = self
                .items
                .iter()
                .zip(reference)
                .map(|(i, r)| i.loadings[q] * r[q])
                .sum();
            if dot < 0.0 && ParameterSet::can_flip_factor(&self.spec, q) {
                self.params.flip_factor(&self.spec, q)?;
            }
        }
        self.refresh()
    }

    fn refresh(&mut self) -> Result<()> {
        let m = self.params.materialize(&self.spec)?;
        self.correlation = m.correlation();
        self.items = m.items;
        Ok(())
    }

    /// Mean and standard error over observations of a fresh IW-ELBO
    /// estimate with `r` importance samples.
    pub fn evaluate(&self, data: &ResponseMatrix, r: usize, seed: u64) -> Result<(f64, f64)> {
        let net = self.inference_net()?;
        observation_elbo(data, &self.spec, &self.params, &net, r, seed)
    }
}

/// Per-observation mean IW-ELBO estimate and its standard error.
pub fn observation_elbo(
    data: &ResponseMatrix,
    spec: &ModelSpec,
    params: &ParameterSet,
    net: &InferenceNet,
    r: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let model = params.materialize(spec)?;
    let ev = Evaluator::new(spec, &model, net, Sampling::new(r))?;
    let mut ws = ev.workspace();
    let mut rng = seeded(seed);
    let mut vals = Vec::with_capacity(data.n_rows());
    for x in data.rows() {
        ev.draw_noise(&mut ws, &mut rng);
        vals.push(ev.observation(x, &mut ws, None)?);
    }
    let n = vals.len() as f64;
    if vals.is_empty() {
        return Err(IfaError::EmptyData("no rows to evaluate".into()));
    }
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok((mean, (var / n).sqrt()))
}

fn check_data(data: &ResponseMatrix, spec: &ModelSpec) -> Result<()> {
    if data.categories() != spec.categories.as_slice() {
        return Err(IfaError::Dimension(format!(
            "data has category counts {:?}, spec has {:?}",
            data.categories(),
            spec.categories
        )));
    }
    if data.is_empty() {
        return Err(IfaError::EmptyData("cannot fit an empty response matrix".into()));
    }
    if spec.factors == 0 {
        return Err(IfaError::InvalidArgument(
            "zero-factor models have a closed-form fit (category proportions)".into(),
        ));
    }
    Ok(())
}

/// Moving-window stopping rule on the per-observation batch objective.
#[derive(Clone, Debug)]
pub struct ConvergenceMonitor {
    window: usize,
    patience: usize,
    tolerance: f64,
    sum: f64,
    count: usize,
    best: f64,
    stale: usize,
}

impl ConvergenceMonitor {
    pub fn new(window: usize, patience: usize, tolerance: f64) -> Self {
        Self {
            window,
            patience,
            tolerance,
            sum: 0.0,
            count: 0,
            best: f64::NEG_INFINITY,
            stale: 0,
        }
    }

    /// Records one step; returns true once the rule says stop.
    pub fn push(&mut self, value: f64) -> bool {
        self.sum += value;
        self.count += 1;
        if self.count < self.window {
            return false;
        }
        let mean = self.sum / self.count as f64;
        self.sum = 0.0;
        self.count = 0;
        if mean > self.best + self.tolerance {
            self.best = mean;
            self.stale = 0;
        } else {
            self.stale += 1;
            self.best = self.best.max(mean);
        }
        self.stale >= self.patience
    }
}

/// Fits the model by stochastic ascent on the IW-ELBO with AMSGrad.
pub fn fit(data: &ResponseMatrix, spec: &ModelSpec, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    spec.validate()?;
    check_data(data, spec)?;
    for w in spec.warnings() {
        warn!("{w}");
    }
    let start = Instant::now();
    let mut init_rng = seeded(derive_seed(config.seed, &[0]));
    let mut params = init_params(spec, &mut init_rng);
    let hidden = config.hidden.clone().unwrap_or_else(|| default_hidden(spec.n_items()));
    let mut net = InferenceNet::new(spec.categories.clone(), spec.factors, &hidden, &mut init_rng)?;
    let mut noise_rng = seeded(derive_seed(config.seed, &[1]));
    let mut order_rng = seeded(derive_seed(config.seed, &[2]));

    let opt = AmsGradConfig::new(config.learning_rate_for(spec.factors));
    let mut omega = params.to_flat(spec);
    let mut omega_state = AmsGradState::zeros(omega.len());
    let mut psi_state = AmsGradState::zeros(net.n_params());
    let sampling = Sampling {
        iw_samples: config.iw_samples,
        mc_samples: config.mc_samples,
        estimator: config.estimator,
    };
    let mut acc = Accumulators::zeros(spec, &net);
    let mut monitor = ConvergenceMonitor::new(config.window, config.patience, config.tolerance);
    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    let mut cursor = order.len();
    let batch_size = config.batch_size.min(order.len());
    let mut trace = Vec::new();
    let mut skipped = 0;
    let mut run_of_skips = 0;
    let mut converged = false;
    let mut batch = Vec::with_capacity(batch_size);
    let mut neg = Vec::new();

    for step in 0..config.max_steps {
        batch.clear();
        while batch.len() < batch_size {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let model = params.materialize(spec)?;
        let ev = Evaluator::new(spec, &model, &net, sampling)?;
        acc.clear();
        let value = match ev.batch(data, &batch, &mut noise_rng, Some(&mut acc)) {
            Ok(v) => {
                run_of_skips = 0;
                v
            }
            Err(IfaError::DegenerateWeights) => {
                warn!("step {step}: all importance weights underflowed; update skipped");
                skipped += 1;
                run_of_skips += 1;
                // A whole window without a usable batch means the fit has collapsed.
                if run_of_skips >= config.window {
                    return Err(IfaError::Numerical(format!(
                        "{run_of_skips} consecutive batches had degenerate importance weights"
                    )));
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        let per_obs = value / batch.len() as f64;
        if !per_obs.is_finite() {
            return Err(IfaError::Numerical(format!(
                "objective became {per_obs} at step {step}"
            )));
        }
        let scale = -1.0 / batch.len() as f64;
        neg.clear();
        neg.extend(acc.model.pull_back(spec, &params).iter().map(|g| g * scale));
        if neg.iter().any(|g| !g.is_finite()) || acc.psi.iter().any(|g| !g.is_finite()) {
            return Err(IfaError::Numerical(format!("non-finite gradient at step {step}")));
        }
        amsgrad_step(&opt, &mut omega, &neg, &mut omega_state);
        params.set_flat(spec, &omega);
        acc.psi.iter_mut().for_each(|g| *g *= scale);
        amsgrad_step(&opt, net.params_mut(), &acc.psi, &mut psi_state);
        trace.push(per_obs);
        if step % 1000 == 0 {
            debug!("step {step}: batch IW-ELBO {per_obs:.4}");
        }
        if monitor.push(per_obs) {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("fit did not converge within {} steps", config.max_steps);
    }

    params.canonicalize_angles(spec)?;
    // Reflect each factor so its loadings sum to a nonnegative value.
    let loadings = crate::grm::apply_constraints(spec, &params.loadings)?;
    for q in 0..spec.factors {
        let s: f64 = loadings.iter().map(|b| b[q]).sum();
        if s < 0.0 && ParameterSet::can_flip_factor(spec, q) {
            params.flip_factor(spec, q)?;
            reflect_network_output(&mut net, q);
        }
    }
    let model = params.materialize(spec)?;
    Ok(FitResult {
        spec: spec.clone(),
        correlation: model.correlation(),
        items: model.items,
        network: net.to_json()?,
        steps: trace.len(),
        trace,
        skipped_steps: skipped,
        converged,
        seconds: start.elapsed().as_secs_f64(),
        n_parameters: spec.parameter_count(),
        params,
        config: config.clone(),
    })
}

/// Negates the network's `mu_q` output so it matches a reflected factor.
fn reflect_network_output(net: &mut InferenceNet, q: usize) {
    let mlp = net.network();
    let l = mlp.n_layers() - 1;
    let (w_off, b_off) = mlp.layer_offsets(l);
    let n_in = mlp.sizes()[l];
    let n_out = mlp.output_width();
    let params = net.params_mut();
    for i in 0..n_in {
        params[w_off + i * n_out + q] = -params[w_off + i * n_out + q];
    }
    params[b_off + q] = -params[b_off + q];
}
