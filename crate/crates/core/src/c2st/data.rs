use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{IfaError, Result};
use crate::grm::ResponseMatrix;
use crate::rng::seeded;

/// Feature rows handed to a classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Patterns {
    /// Item response patterns; compared by equality of codes.
    Categorical(ResponseMatrix),
    /// Real-valued rows stored row-major.
    Real { cols: usize, values: Vec<f64> },
}

impl Patterns {
    pub fn real(cols: usize, values: Vec<f64>) -> Result<Self> {
        if cols == 0 || values.len() % cols != 0 {
            return Err(IfaError::Dimension(format!(
                "{} values do not form rows of width {cols}",
                values.len()
            )));
        }
        Ok(Patterns::Real { cols, values })
    }

    pub fn n_rows(&self) -> usize {
        match self {
            Patterns::Categorical(m) => m.n_rows(),
            Patterns::Real { cols, values } => values.len() / cols,
        }
    }

    pub fn n_cols(&self) -> usize {
        match self {
            Patterns::Categorical(m) => m.n_items(),
            Patterns::Real { cols, .. } => *cols,
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        match self {
            Patterns::Categorical(m) => Patterns::Categorical(m.select_rows(idx)),
            Patterns::Real { cols, values } => {
                let mut out = Vec::with_capacity(idx.len() * cols);
                for &i in idx {
                    out.extend_from_slice(&values[i * cols..(i + 1) * cols]);
                }
                Patterns::Real {
                    cols: *cols,
                    values: out,
                }
            }
        }
    }

    /// Row `i` as real features (category codes are used as numbers).
    pub fn features(&self, i: usize, out: &mut Vec<f64>) {
        out.clear();
        match self {
            Patterns::Categorical(m) => out.extend(m.row(i).iter().map(|&c| c as f64)),
            Patterns::Real { cols, values } => out.extend_from_slice(&values[i * cols..(i + 1) * cols]),
        }
    }

    /// Copy with column `j` rearranged by `perm` (row `i` takes the value
    /// of row `perm[i]`).
    pub fn permute_column(&self, j: usize, perm: &[usize]) -> Result<Self> {
        match self {
            Patterns::Categorical(m) => {
                let n = m.n_items();
                let mut codes = m.codes().to_vec();
                for (i, &src) in perm.iter().enumerate() {
                    codes[i * n + j] = m.get(src, j);
                }
                Ok(Patterns::Categorical(ResponseMatrix::new(
                    m.categories().to_vec(),
                    m.n_rows(),
                    codes,
                )?))
            }
            Patterns::Real { cols, values } => {
                let mut out = values.clone();
                for (i, &src) in perm.iter().enumerate() {
                    out[i * cols + j] = values[src * cols + j];
                }
                Ok(Patterns::Real {
                    cols: *cols,
                    values: out,
                })
            }
        }
    }

    fn concat(&self, other: &Self) -> Result<Self> {
        match (self, other) {
            (Patterns::Categorical(a), Patterns::Categorical(b)) => {
                if a.categories() != b.categories() {
                    return Err(IfaError::Dimension(format!(
                        "real data has category counts {:?}, synthetic data has {:?}",
                        a.categories(),
                        b.categories()
                    )));
                }
                let mut codes = a.codes().to_vec();
                codes.extend_from_slice(b.codes());
                Ok(Patterns::Categorical(ResponseMatrix::new(
                    a.categories().to_vec(),
                    a.n_rows() + b.n_rows(),
                    codes,
                )?))
            }
            (Patterns::Real { cols: ca, values: va }, Patterns::Real { cols: cb, values: vb }) => {
                if ca != cb {
                    return Err(IfaError::Dimension(format!("column counts differ ({ca} vs {cb})")));
                }
                let mut values = va.clone();
                values.extend_from_slice(vb);
                Ok(Patterns::Real { cols: *ca, values })
            }
            _ => Err(IfaError::InvalidArgument(
                "cannot pool categorical and real-valued patterns".into(),
            )),
        }
    }
}

/// Shuffled real-versus-synthetic data split into disjoint halves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub train: Patterns,
    pub train_labels: Vec<u8>,
    pub test: Patterns,
    pub test_labels: Vec<u8>,
    /// Positions in the pooled data (real rows first) of each train row.
    pub train_index: Vec<usize>,
    /// Positions in the pooled data of each test row.
    pub test_index: Vec<usize>,
}

impl LabeledSet {
    pub fn n_test(&self) -> usize {
        self.test_labels.len()
    }
}

/// Labels real rows 1 and synthetic rows 0, shuffles the pooled rows and
/// splits them into equally sized train and test sets.
pub fn build_split(real: &Patterns, synthetic: &Patterns, seed: u64) -> Result<LabeledSet> {
    if real.n_cols() != synthetic.n_cols() {
        return Err(IfaError::Dimension(format!(
            "real data has {} columns, synthetic data has {}",
            real.n_cols(),
            synthetic.n_cols()
        )));
    }
    let pooled = real.concat(synthetic)?;
    let n_real = real.n_rows();
    let total = pooled.n_rows();
    if total < 2 {
        return Err(IfaError::EmptyData("a two-sample test needs at least two rows".into()));
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut seeded(seed));
    let n_train = total / 2;
    let (train_index, test_index) = order.split_at(n_train);
    let label = |i: &usize| u8::from(*i < n_real);
    Ok(LabeledSet {
        train: pooled.select_rows(train_index),
        train_labels: train_index.iter().map(label).collect(),
        test: pooled.select_rows(test_index),
        test_labels: test_index.iter().map(label).collect(),
        train_index: train_index.to_vec(),
        test_index: test_index.to_vec(),
    })
}
