use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{IfaError, Result};
use crate::grm::ModelSpec;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `1 - Phi(x)` without cancellation.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// `erfc^{-1}(y)` polished by one Newton step; the library inverse alone
/// round-trips only to about 1e-11.
fn erfc_inv_refined(y: f64) -> f64 {
    let x = erfc_inv(y);
    if !x.is_finite() {
        return x;
    }
    let slope = -std::f64::consts::FRAC_2_SQRT_PI * (-x * x).exp();
    if slope == 0.0 {
        return x;
    }
    x - (erfc(x) - y) / slope
}

/// `Phi^{-1}(1 - a)` for `a` in `(0, 1)`.
pub fn normal_upper_quantile(a: f64) -> f64 {
    std::f64::consts::SQRT_2 * erfc_inv_refined(2.0 * a)
}

/// Share of rows whose thresholded prediction `1(p > 1/2)` equals the label.
/// A probability of exactly one half predicts class 0.
pub fn accuracy(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.is_empty() {
        return Err(IfaError::EmptyData("accuracy of an empty test set".into()));
    }
    if probs.len() != labels.len() {
        return Err(IfaError::Dimension(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(p, l)| u8::from(**p > 0.5) == **l)
        .count();
    Ok(hits as f64 / probs.len() as f64)
}

/// p-value of the exact test `H0: acc = 1/2`.
pub fn exact_pvalue(acc: f64, n_test: usize) -> f64 {
    let sd = (0.25 / n_test as f64).sqrt();
    normal_sf((acc - 0.5) / sd)
}

/// p-value of the approximate test `H0: acc = 1/2 + delta`.
pub fn approx_pvalue(acc: f64, n_test: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(IfaError::InvalidArgument(format!(
            "tolerance delta = {delta} must lie in (0, 1/2)"
        )));
    }
    let sd = ((0.25 - delta * delta) / n_test as f64).sqrt();
    Ok(normal_sf((acc - 0.5 - delta) / sd))
}

/// Exact test when `delta = 0`, approximate test otherwise.
pub fn pvalue(acc: f64, n_test: usize, delta: f64) -> Result<f64> {
    if delta == 0.0 {
        Ok(exact_pvalue(acc, n_test))
    } else {
        approx_pvalue(acc, n_test, delta)
    }
}

/// Approximate power of the (approximate) C2ST at level `alpha` with
/// tolerance `delta` and effect size `eps`:
///
/// ```text
/// Phi((eps sqrt(N) - sqrt(1/4 - delta^2) Phi^{-1}(1 - alpha)) / sqrt(1/4 - delta^2 - 2 delta eps - eps^2))
/// ```
pub fn power(alpha: f64, n_test: usize, delta: f64, eps: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(IfaError::InvalidArgument(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if !(0.0..0.5).contains(&delta) {
        return Err(IfaError::InvalidArgument(format!(
            "delta = {delta} must lie in [0, 1/2)"
        )));
    }
    if !(eps >= 0.0 && eps < 0.5 - delta) {
        return Err(IfaError::InvalidArgument(format!(
            "eps = {eps} must lie in [0, 1/2 - delta)"
        )));
    }
    if n_test == 0 {
        return Err(IfaError::InvalidArgument("test set size must be positive".into()));
    }
    if eps == 0.0 {
        // Numerator and denominator scales coincide, so the formula is
        // Phi(-Phi^{-1}(1 - alpha)) = alpha.
        return Ok(alpha);
    }
    let s0 = (0.25 - delta * delta).sqrt();
    let s1 = (0.25 - delta * delta - 2.0 * delta * eps - eps * eps).sqrt();
    // In erfc units (x / sqrt 2).
    let a = erfc_inv_refined(2.0 * alpha);
    let w = eps * (n_test as f64).sqrt() * FRAC_1_SQRT_2 / s1 - (s0 / s1) * a;
    Ok(0.5 * erfc(-w))
}

/// Number of fitted parameters: free intercepts, free loading parameters
/// (a tie group counts once) and free correlation angles.
pub fn count_parameters(spec: &ModelSpec) -> usize {
    spec.parameter_count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfiOutcome {
    pub acc_prop: f64,
    pub acc_base: f64,
    pub m_prop: usize,
    pub m_base: usize,
    pub rfi: f64,
}

/// `1 - (M_prop / M_base) (Delta_prop / Delta_base)`, `Delta = acc - 1/2`.
/// Not clamped: values above one indicate overfitting classifiers and
/// values below `1 - M_prop / M_base` a model worse than the baseline.
pub fn rfi(acc_prop: f64, acc_base: f64, m_prop: usize, m_base: usize) -> Result<RfiOutcome> {
    let d_base = acc_base - 0.5;
    if d_base == 0.0 {
        return Err(IfaError::InvalidArgument(
            "baseline accuracy is exactly 1/2; the relative fit index is undefined".into(),
        ));
    }
    if m_base == 0 {
        return Err(IfaError::InvalidArgument("baseline parameter count is zero".into()));
    }
    let d_prop = acc_prop - 0.5;
    Ok(RfiOutcome {
        acc_prop,
        acc_base,
        m_prop,
        m_base,
        rfi: 1.0 - (m_prop as f64 / m_base as f64) * (d_prop / d_base),
    })
}
