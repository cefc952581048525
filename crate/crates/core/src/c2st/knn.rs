//! k-nearest-neighbour classifier: Hamming distance on response patterns,
//! Euclidean distance on real-valued rows.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Patterns;
use crate::error::{IfaError, Result};
use crate::rng::seeded;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    /// Number of neighbours; `None` uses `floor(sqrt(N_test))`.
    pub k: Option<usize>,
    /// Train on this fraction of the training rows (large data sets).
    pub subsample: Option<f64>,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: None,
            subsample: None,
        }
    }
}

pub fn default_k(n_test: usize) -> usize {
    ((n_test as f64).sqrt().floor() as usize).max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub train: Patterns,
    pub labels: Vec<u8>,
    pub k: usize,
}

/// Fraction of unequal entries.
pub fn hamming(a: &[u16], b: &[u16]) -> f64 {
    let diff = a.iter().zip(b).filter(|(x, y)| x != y).count();
    diff as f64 / a.len().max(1) as f64
}

impl KnnModel {
    pub fn fit(train: &Patterns, labels: &[u8], k: usize, subsample: Option<f64>, seed: u64) -> Result<Self> {
        if train.n_rows() == 0 || train.n_rows() != labels.len() {
            return Err(IfaError::EmptyData("KNN needs labelled training rows".into()));
        }
        let (train, labels) = match subsample {
            Some(f) if f < 1.0 => {
                if !(f > 0.0) {
                    return Err(IfaError::InvalidArgument(format!(
                        "subsample fraction {f} must be in (0, 1]"
                    )));
                }
                let n = train.n_rows();
                let m = ((n as f64 * f).round() as usize).clamp(1, n);
                let mut idx = sample(&mut seeded(seed), n, m).into_vec();
                idx.sort_unstable();
                (train.select_rows(&idx), idx.iter().map(|&i| labels[i]).collect())
            }
            _ => (train.clone(), labels.to_vec()),
        };
        let k = k.clamp(1, labels.len());
        Ok(Self { train, labels, k })
    }

    fn distances(&self, test: &Patterns, i: usize, out: &mut Vec<(f64, usize)>) {
        out.clear();
        match (&self.train, test) {
            (Patterns::Categorical(tr), Patterns::Categorical(te)) => {
                let row = te.row(i);
                out.extend(tr.rows().enumerate().map(|(t, r)| (hamming(row, r), t)));
            }
            (Patterns::Real { cols, values: tr }, Patterns::Real { values: te, .. }) => {
                let row = &te[i * cols..(i + 1) * cols];
                out.extend(tr.chunks(*cols).enumerate().map(|(t, r)| {
                    let d2: f64 = row.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d2.sqrt(), t)
                }));
            }
            _ => unreachable!("pattern kinds checked by predict"),
        }
    }

    /// Share of label-1 rows among the `k` nearest training rows; distance
    /// ties are broken by training-row index.
    pub fn predict(&self, test: &Patterns) -> Result<Vec<f64>> {
        let same_kind = matches!(
            (&self.train, test),
            (Patterns::Categorical(_), Patterns::Categorical(_)) | (Patterns::Real { .. }, Patterns::Real { .. })
        );
        if !same_kind || test.n_cols() != self.train.n_cols() {
            return Err(IfaError::Dimension("test rows do not match the training rows".into()));
        }
        let k = self.k;
        let probs = (0..test.n_rows())
            .into_par_iter()
            .map_init(Vec::new, |buf, i| {
                self.distances(test, i, buf);
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if k < buf.len() {
                    buf.select_nth_unstable_by(k - 1, cmp);
                }
                let ones: usize = buf[..k].iter().map(|&(_, t)| self.labels[t] as usize).sum();
                ones as f64 / k as f64
            })
            .collect();
        Ok(probs)
    }
}
