use serde::{Deserialize, Serialize};

use crate::error::{IfaError, Result};

/// `N x J` matrix of 0-based category codes, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    rows: usize,
    categories: Vec<usize>,
    codes: Vec<u16>,
}

impl ResponseMatrix {
    /// Validates every code against its item's category count.
    pub fn new(categories: Vec<usize>, rows: usize, codes: Vec<u16>) -> Result<Self> {
        let j = categories.len();
        if codes.len() != rows * j {
            return Err(IfaError::Dimension(format!(
                "{} codes supplied for a {rows}x{j} response matrix",
                codes.len()
            )));
        }
        if let Some(bad) = categories.iter().position(|&k| k < 2) {
            return Err(IfaError::InvalidArgument(format!(
                "item {bad} must have at least 2 categories"
            )));
        }
        if j > 0 {
            for (i, row) in codes.chunks(j).enumerate() {
                for (item, (&c, &k)) in row.iter().zip(&categories).enumerate() {
                    if c as usize >= k {
                        return Err(IfaError::CategoryOutOfRange {
                            row: i,
                            item,
                            code: c as i64,
                            categories: k,
                        });
                    }
                }
            }
        }
        Ok(Self {
            rows,
            categories,
            codes,
        })
    }

    pub fn from_rows(categories: Vec<usize>, rows: &[Vec<u16>]) -> Result<Self> {
        let j = categories.len();
        if let Some(i) = rows.iter().position(|r| r.len() != j) {
            return Err(IfaError::Dimension(format!(
                "row {i} has {} entries, expected {j}",
                rows[i].len()
            )));
        }
        Self::new(categories, rows.len(), rows.concat())
    }

    pub fn empty(categories: Vec<usize>) -> Self {
        Self {
            rows: 0,
            categories,
            codes: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_items(&self) -> usize {
        self.categories.len()
    }

    pub fn categories(&self) -> &[usize] {
        &self.categories
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u16] {
        let j = self.categories.len();
        &self.codes[i * j..(i + 1) * j]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u16 {
        self.codes[i * self.categories.len() + j]
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u16]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut codes = Vec::with_capacity(idx.len() * self.n_items());
        for &i in idx {
            codes.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            categories: self.categories.clone(),
            codes,
        }
    }

    /// Total one-hot width `sum_j K_j`.
    pub fn one_hot_width(&self) -> usize {
        self.categories.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_codes() {
        let err = ResponseMatrix::from_rows(vec![2, 3], &[vec![0, 2], vec![2, 0]]).unwrap_err();
        assert!(matches!(err, IfaError::CategoryOutOfRange { row: 1, item: 0, .. }));
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!(ResponseMatrix::from_rows(vec![2, 2], &[vec![0, 1], vec![1]]).is_err());
    }

    #[test]
    fn row_access_and_selection() {
        let m = ResponseMatrix::from_rows(vec![2, 3], &[vec![0, 2], vec![1, 1], vec![1, 0]]).unwrap();
        assert_eq!(m.row(1), &[1, 1]);
        assert_eq!(m.get(2, 0), 1);
        let s = m.select_rows(&[2, 0]);
        assert_eq!(s.row(0), &[1, 0]);
        assert_eq!(s.row(1), &[0, 2]);
        assert_eq!(m.one_hot_width(), 5);
    }
}
