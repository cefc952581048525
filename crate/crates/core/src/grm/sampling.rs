use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::correlation::cholesky_psd;
use super::item::ItemParams;
use super::responses::ResponseMatrix;
use crate::error::{IfaError, Result};
use crate::rng::{seeded, Rng};

/// A fully specified GRM that can generate responses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratingModel {
    pub items: Vec<ItemParams>,
    pub correlation: Vec<Vec<f64>>,
}

impl GeneratingModel {
    pub fn categories(&self) -> Vec<usize> {
        self.items.iter().map(ItemParams::categories).collect()
    }

    pub fn factors(&self) -> usize {
        self.correlation.len()
    }

    /// Draws `z ~ N(0, Sigma)` and then each item response given `z`.
    pub fn sample_with(&self, n: usize, rng: &mut Rng) -> Result<ResponseMatrix> {
        let p = self.factors();
        if let Some(j) = self.items.iter().position(|i| i.loadings.len() != p) {
            return Err(IfaError::Dimension(format!(
                "item {j} has {} loadings for {p} factors",
                self.items[j].loadings.len()
            )));
        }
        let l = cholesky_psd(&self.correlation)?;
        let categories = self.categories();
        let mut codes = Vec::with_capacity(n * self.items.len());
        let mut e = vec![0.0; p];
        let mut z = vec![0.0; p];
        for _ in 0..n {
            for v in e.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            l.mul_vec(&e, &mut z);
            for item in &self.items {
                let lp = item.linear_predictor(&z);
                let u: f64 = rng.random();
                // Pr(x >= k) decreases in k, so x is the number of
                // boundaries that u falls below.
                let x = item
                    .intercepts
                    .iter()
                    .take_while(|a| u < 1.0 / (1.0 + (*a + lp).exp()))
                    .count();
                codes.push(x as u16);
            }
        }
        ResponseMatrix::new(categories, n, codes)
    }
}

pub fn sample_responses(model: &GeneratingModel, n: usize, seed: u64) -> Result<ResponseMatrix> {
    model.sample_with(n, &mut seeded(seed))
}

/// Zero-factor model: independent multinomial columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub proportions: Vec<Vec<f64>>,
}

impl BaselineModel {
    pub fn categories(&self) -> Vec<usize> {
        self.proportions.iter().map(Vec::len).collect()
    }

    pub fn sample_with(&self, n: usize, rng: &mut Rng) -> Result<ResponseMatrix> {
        for (j, p) in self.proportions.iter().enumerate() {
            let total: f64 = p.iter().sum();
            if p.iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > 1e-8 {
                return Err(IfaError::InvalidArgument(format!(
                    "item {j}: category proportions must be nonnegative and sum to 1"
                )));
            }
        }
        let mut codes = Vec::with_capacity(n * self.proportions.len());
        for _ in 0..n {
            for p in &self.proportions {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut x = p.len() - 1;
                for (k, v) in p.iter().enumerate() {
                    acc += v;
                    if u < acc {
                        x = k;
                        break;
                    }
                }
                codes.push(x as u16);
            }
        }
        ResponseMatrix::new(self.categories(), n, codes)
    }
}

/// Observed category proportions per item.
pub fn zero_factor_mle(data: &ResponseMatrix) -> Result<BaselineModel> {
    if data.is_empty() {
        return Err(IfaError::EmptyData(
            "zero-factor estimation needs at least one row".into(),
        ));
    }
    let mut counts: Vec<Vec<f64>> = data.categories().iter().map(|&k| vec![0.0; k]).collect();
    for row in data.rows() {
        for (c, &x) in counts.iter_mut().zip(row) {
            c[x as usize] += 1.0;
        }
    }
    let n = data.n_rows() as f64;
    for c in &mut counts {
        for v in c.iter_mut() {
            *v /= n;
        }
    }
    Ok(BaselineModel { proportions: counts })
}

pub fn sample_baseline(model: &BaselineModel, n: usize, seed: u64) -> Result<ResponseMatrix> {
    model.sample_with(n, &mut seeded(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> GeneratingModel {
        GeneratingModel {
            items: vec![
                ItemParams::new(vec![-0.5, 0.8], vec![1.2, 0.0]).unwrap(),
                ItemParams::new(vec![0.3], vec![0.0, -0.9]).unwrap(),
            ],
            correlation: vec![vec![1.0, 0.4], vec![0.4, 1.0]],
        }
    }

    #[test]
    fn same_seed_same_matrix() {
        let m = model();
        assert_eq!(
            sample_responses(&m, 50, 9).unwrap(),
            sample_responses(&m, 50, 9).unwrap()
        );
        assert_ne!(
            sample_responses(&m, 50, 9).unwrap(),
            sample_responses(&m, 50, 10).unwrap()
        );
    }

    #[test]
    fn zero_rows() {
        let x = sample_responses(&model(), 0, 1).unwrap();
        assert_eq!(x.n_rows(), 0);
        assert_eq!(x.n_items(), 2);
    }

    #[test]
    fn rejects_non_psd_correlation() {
        let mut m = model();
        m.correlation = vec![vec![1.0, 1.5], vec![1.5, 1.0]];
        assert!(matches!(
            sample_responses(&m, 5, 1),
            Err(IfaError::NotPositiveSemiDefinite)
        ));
    }

    #[test]
    fn counting_proportions() {
        let x = ResponseMatrix::from_rows(vec![3], &[vec![0], vec![0], vec![1], vec![2]]).unwrap();
        assert_eq!(zero_factor_mle(&x).unwrap().proportions, vec![vec![0.5, 0.25, 0.25]]);
        let c = ResponseMatrix::from_rows(vec![3], &[vec![1], vec![1]]).unwrap();
        assert_eq!(zero_factor_mle(&c).unwrap().proportions, vec![vec![0.0, 1.0, 0.0]]);
        assert!(zero_factor_mle(&ResponseMatrix::empty(vec![2])).is_err());
    }

    #[test]
    fn indicator_proportions_give_constant_column() {
        let b = BaselineModel {
            proportions: vec![vec![0.0, 0.0, 1.0]],
        };
        let x = sample_baseline(&b, 100, 3).unwrap();
        assert!(x.rows().all(|r| r[0] == 2));
    }
}
