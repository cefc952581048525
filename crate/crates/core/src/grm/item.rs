use serde::{Deserialize, Serialize};

use crate::error::{IfaError, Result};

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Ordered intercepts from raw parameters `(a_1, d_2, .., d_{K-1})`:
/// `alpha_1 = a_1`, `alpha_k = alpha_{k-1} + softplus(d_k)`.
pub fn intercepts_from_raw(raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    let mut acc = 0.0;
    for (k, &r) in raw.iter().enumerate() {
        acc = if k == 0 { r } else { acc + softplus(r) };
        out.push(acc);
    }
    out
}

/// Inverse of [`intercepts_from_raw`]; intercepts must be strictly increasing.
pub fn raw_from_intercepts(alpha: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(alpha.len());
    for (k, &a) in alpha.iter().enumerate() {
        if k == 0 {
            out.push(a);
        } else {
            let gap = a - alpha[k - 1];
            if !(gap > 0.0) {
                return Err(IfaError::InvalidArgument(format!(
                    "intercepts must be strictly increasing (alpha[{}] = {}, alpha[{k}] = {a})",
                    k - 1,
                    alpha[k - 1]
                )));
            }
            // softplus^{-1}(g) = log(expm1(g)), stable for large g
            out.push(if gap > 30.0 {
                gap + (-(-gap).exp_m1()).ln()
            } else {
                gap.exp_m1().ln()
            });
        }
    }
    Ok(out)
}

/// Chain rule from `d/dalpha` to `d/d(raw intercepts)`.
pub fn pull_back_intercepts(raw: &[f64], d_alpha: &[f64]) -> Vec<f64> {
    let n = raw.len();
    let mut out = vec![0.0; n];
    let mut tail = 0.0;
    for k in (0..n).rev() {
        tail += d_alpha[k];
        out[k] = if k == 0 { tail } else { tail * sigmoid(raw[k]) };
    }
    out
}

/// Materialized parameters of one item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemParams {
    /// `K - 1` strictly increasing intercepts.
    pub intercepts: Vec<f64>,
    /// One loading per factor.
    pub loadings: Vec<f64>,
}

/// Log-probability of one category and its derivatives with respect to the
/// two adjacent boundary logits `eta_k = alpha_k + beta' z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CategoryTerm {
    pub log_prob: f64,
    /// Derivative w.r.t. the lower boundary logit (`eta_k`), zero for k = 0.
    pub d_lower: f64,
    /// Derivative w.r.t. the upper boundary logit (`eta_{k+1}`), zero for k = K-1.
    pub d_upper: f64,
}

/// `log pi_k` where `pi_k = Pr(x >= k) - Pr(x >= k+1)` and
/// `Pr(x >= k) = 1 / (1 + exp(eta_k))`. `lower` is `eta_k` (absent for
/// k = 0) and `upper` is `eta_{k+1}` (absent for the top category).
#[inline]
pub fn log_category_prob(lower: Option<f64>, upper: Option<f64>) -> CategoryTerm {
    match (lower, upper) {
        (None, Some(b)) => CategoryTerm {
            log_prob: log_sigmoid(b),
            d_lower: 0.0,
            d_upper: sigmoid(-b),
        },
        (Some(a), None) => CategoryTerm {
            log_prob: log_sigmoid(-a),
            d_lower: -sigmoid(a),
            d_upper: 0.0,
        },
        (Some(a), Some(b)) => {
            // sigma(b) - sigma(a) = sigma(b) sigma(-a) (1 - exp(a - b))
            let gap = b - a;
            let inv = 1.0 / gap.exp_m1();
            CategoryTerm {
                log_prob: log_sigmoid(b) + log_sigmoid(-a) + (-(-gap).exp_m1()).ln(),
                d_lower: -sigmoid(a) - inv,
                d_upper: sigmoid(-b) + inv,
            }
        }
        (None, None) => CategoryTerm {
            log_prob: 0.0,
            d_lower: 0.0,
            d_upper: 0.0,
        },
    }
}

impl ItemParams {
    pub fn new(intercepts: Vec<f64>, loadings: Vec<f64>) -> Result<Self> {
        if intercepts.is_empty() {
            return Err(IfaError::InvalidArgument("an item needs at least one intercept".into()));
        }
        if intercepts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(IfaError::InvalidArgument(
                "intercepts must be strictly increasing".into(),
            ));
        }
        if intercepts.iter().chain(&loadings).any(|v| !v.is_finite()) {
            return Err(IfaError::InvalidArgument("item parameters must be finite".into()));
        }
        Ok(Self { intercepts, loadings })
    }

    pub fn categories(&self) -> usize {
        self.intercepts.len() + 1
    }

    fn check_z(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.loadings.len() {
            return Err(IfaError::Dimension(format!(
                "latent vector has length {}, item has {} loadings",
                z.len(),
                self.loadings.len()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn linear_predictor(&self, z: &[f64]) -> f64 {
        self.loadings.iter().zip(z).map(|(b, v)| b * v).sum()
    }

    /// `(Pr(x >= 0), .., Pr(x >= K))`, with the first entry 1 and the last 0.
    pub fn boundary_probs(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_z(z)?;
        let lp = self.linear_predictor(z);
        let mut out = Vec::with_capacity(self.categories() + 1);
        out.push(1.0);
        out.extend(self.intercepts.iter().map(|a| sigmoid(-(a + lp))));
        out.push(0.0);
        Ok(out)
    }

    pub fn category_probs(&self, z: &[f64]) -> Result<Vec<f64>> {
        let b = self.boundary_probs(z)?;
        Ok(b.windows(2).map(|w| w[0] - w[1]).collect())
    }

    #[inline]
    pub(crate) fn term(&self, k: usize, lp: f64) -> CategoryTerm {
        let lower = if k > 0 { Some(self.intercepts[k - 1] + lp) } else { None };
        let upper = self.intercepts.get(k).map(|a| a + lp);
        log_category_prob(lower, upper)
    }

    pub fn log_prob(&self, k: usize, z: &[f64]) -> Result<f64> {
        self.check_z(z)?;
        if k >= self.categories() {
            return Err(IfaError::InvalidArgument(format!(
                "category {k} out of range for an item with {} categories",
                self.categories()
            )));
        }
        Ok(self.term(k, self.linear_predictor(z)).log_prob)
    }
}

fn check_pattern(x: &[u16], items: &[ItemParams]) -> Result<()> {
    if x.len() != items.len() {
        return Err(IfaError::Dimension(format!(
            "response pattern has {} entries for {} items",
            x.len(),
            items.len()
        )));
    }
    for (j, (&code, item)) in x.iter().zip(items).enumerate() {
        if code as usize >= item.categories() {
            return Err(IfaError::CategoryOutOfRange {
                row: 0,
                item: j,
                code: code as i64,
                categories: item.categories(),
            });
        }
    }
    Ok(())
}

/// `log p(x | z) = sum_j log pi_{j, x_j}` under local independence.
pub fn log_cond_likelihood(x: &[u16], items: &[ItemParams], z: &[f64]) -> Result<f64> {
    check_pattern(x, items)?;
    let mut total = 0.0;
    for (item, &code) in items.iter().zip(x) {
        item.check_z(z)?;
        total += item.term(code as usize, item.linear_predictor(z)).log_prob;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodGradient {
    /// Per item, derivative w.r.t. each materialized intercept.
    pub intercepts: Vec<Vec<f64>>,
    /// Per item, derivative w.r.t. the materialized loadings.
    pub loadings: Vec<Vec<f64>>,
    pub z: Vec<f64>,
}

/// [`log_cond_likelihood`] together with its gradient.
pub fn log_cond_likelihood_grad(x: &[u16], items: &[ItemParams], z: &[f64]) -> Result<(f64, LikelihoodGradient)> {
    check_pattern(x, items)?;
    let mut total = 0.0;
    let mut grad = LikelihoodGradient {
        intercepts: items.iter().map(|i| vec![0.0; i.intercepts.len()]).collect(),
        loadings: items.iter().map(|i| vec![0.0; i.loadings.len()]).collect(),
        z: vec![0.0; z.len()],
    };
    for (j, (item, &code)) in items.iter().zip(x).enumerate() {
        item.check_z(z)?;
        let k = code as usize;
        let t = item.term(k, item.linear_predictor(z));
        total += t.log_prob;
        if k > 0 {
            grad.intercepts[j][k - 1] += t.d_lower;
        }
        if k < item.intercepts.len() {
            grad.intercepts[j][k] += t.d_upper;
        }
        let d_lp = t.d_lower + t.d_upper;
        for p in 0..z.len() {
            grad.loadings[j][p] = d_lp * z[p];
            grad.z[p] += d_lp * item.loadings[p];
        }
    }
    Ok((total, grad))
}
