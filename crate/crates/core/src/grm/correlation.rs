//! Hyperspherical parameterization of a correlation matrix through the
//! angles of its Cholesky factor rows.
//!
//! Row `p` of `L` is a unit vector:
//!
//! ```text
//! l[p][0] = cos(t[p][0])
//! l[p][q] = cos(t[p][q]) * prod_{r<q} sin(t[p][r])     0 < q < p
//! l[p][p] = prod_{r<p} sin(t[p][r])
//! ```
//!
//! so `Sigma = L L^T` always has a unit diagonal.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::spec::{angle_count, angle_index};
use crate::error::{IfaError, Result};

/// Strictly-lower-triangular angle matrix, packed row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationAngles {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl CorrelationAngles {
    /// All angles at pi/2, giving `Sigma = I`.
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            values: vec![FRAC_PI_2; angle_count(dim)],
        }
    }

    pub fn from_values(dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != angle_count(dim) {
            return Err(IfaError::Dimension(format!(
                "{} angles supplied for a {dim}x{dim} correlation matrix (expected {})",
                values.len(),
                angle_count(dim)
            )));
        }
        Ok(Self { dim, values })
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.values[angle_index(p, q)]
    }

    pub fn set(&mut self, p: usize, q: usize, v: f64) {
        self.values[angle_index(p, q)] = v;
    }

    pub fn validate(&self) -> Result<()> {
        for p in 1..self.dim {
            for q in 0..p {
                let a = self.get(p, q);
                if !(a > 0.0 && a <= PI) {
                    return Err(IfaError::InvalidAngle {
                        row: p,
                        col: q,
                        angle: a,
                    });
                }
            }
        }
        Ok(())
    }
}

// cos and sin through the complement so that pi/2 yields exactly (0, 1).
#[inline]
fn cos_sin(angle: f64) -> (f64, f64) {
    let c = FRAC_PI_2 - angle;
    (c.sin(), c.cos())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowerTriangular {
    dim: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim);
        for p in 0..dim {
            l.data[p * dim + p] = 1.0;
        }
        l
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut l = Self::zeros(dim);
        for (p, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(IfaError::Dimension(format!(
                    "row {p} has length {}, expected {dim}",
                    row.len()
                )));
            }
            for q in 0..=p {
                l.data[p * dim + q] = row[q];
            }
        }
        Ok(l)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.data[p * self.dim + q]
    }

    #[inline]
    pub(crate) fn set(&mut self, p: usize, q: usize, v: f64) {
        self.data[p * self.dim + q] = v;
    }

    #[inline]
    pub(crate) fn add(&mut self, p: usize, q: usize, v: f64) {
        self.data[p * self.dim + q] += v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.dim.max(1))
            .take(self.dim)
            .map(|r| r.to_vec())
            .collect()
    }

    /// `L e`.
    pub fn mul_vec(&self, e: &[f64], out: &mut [f64]) {
        for p in 0..self.dim {
            let row = &self.data[p * self.dim..p * self.dim + p + 1];
            out[p] = row.iter().zip(e).map(|(l, x)| l * x).sum();
        }
    }

    /// Solves `L y = z` by forward substitution.
    pub fn solve(&self, z: &[f64], y: &mut [f64]) {
        for p in 0..self.dim {
            let row = &self.data[p * self.dim..p * self.dim + p];
            let s: f64 = row.iter().zip(y.iter()).map(|(l, v)| l * v).sum();
            y[p] = (z[p] - s) / self.data[p * self.dim + p];
        }
    }

    /// Solves `L^T u = y` by back substitution.
    pub fn solve_transpose(&self, y: &[f64], u: &mut [f64]) {
        for p in (0..self.dim).rev() {
            let mut s = y[p];
            for q in p + 1..self.dim {
                s -= self.data[q * self.dim + p] * u[q];
            }
            u[p] = s / self.data[p * self.dim + p];
        }
    }

    /// `sum_p log |l_pp|`, i.e. half the log-determinant of `L L^T`.
    pub fn log_abs_det(&self) -> f64 {
        (0..self.dim).map(|p| self.get(p, p).abs().ln()).sum()
    }

    pub fn min_abs_diagonal(&self) -> f64 {
        (0..self.dim)
            .map(|p| self.get(p, p).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// `L L^T` as nested rows.
    pub fn to_correlation(&self) -> Vec<Vec<f64>> {
        let n = self.dim;
        let mut sigma = vec![vec![0.0; n]; n];
        for p in 0..n {
            for q in 0..=p {
                let v: f64 = (0..=q).map(|r| self.get(p, r) * self.get(q, r)).sum();
                sigma[p][q] = v;
                sigma[q][p] = v;
            }
        }
        sigma
    }
}

/// Builds `L` from arbitrary real angles without range checks.
pub fn cholesky_from_angles(angles: &CorrelationAngles) -> LowerTriangular {
    let n = angles.dim;
    let mut l = LowerTriangular::zeros(n);
    if n == 0 {
        return l;
    }
    l.set(0, 0, 1.0);
    for p in 1..n {
        let mut prod = 1.0;
        for q in 0..p {
            let (c, s) = cos_sin(angles.get(p, q));
            l.set(p, q, c * prod);
            prod *= s;
        }
        l.set(p, p, prod);
    }
    l
}

/// Validated construction of `(L, Sigma)` from angles in `(0, pi]`.
pub fn build_correlation(angles: &CorrelationAngles) -> Result<(LowerTriangular, Vec<Vec<f64>>)> {
    angles.validate()?;
    let l = cholesky_from_angles(angles);
    let sigma = l.to_correlation();
    Ok((l, sigma))
}

/// Chain rule from `dF/dL` (lower triangle) to `dF/dangles`.
pub fn angle_gradient(angles: &CorrelationAngles, grad_l: &LowerTriangular) -> Vec<f64> {
    let n = angles.dim;
    let mut out = vec![0.0; angle_count(n)];
    let mut cs = Vec::with_capacity(n);
    for p in 1..n {
        cs.clear();
        cs.extend((0..p).map(|q| cos_sin(angles.get(p, q))));
        // product of sines over r < upto, skipping r == skip
        let sin_prod =
            |upto: usize, skip: usize| -> f64 { (0..upto).filter(|&r| r != skip).map(|r| cs[r].1).product() };
        for t in 0..p {
            let mut g = 0.0;
            for q in t..p {
                let d = if q == t {
                    -cs[t].1 * sin_prod(t, usize::MAX)
                } else {
                    cs[q].0 * cs[t].0 * sin_prod(q, t)
                };
                g += grad_l.get(p, q) * d;
            }
            g += grad_l.get(p, p) * cs[t].0 * sin_prod(p, t);
            out[angle_index(p, t)] = g;
        }
    }
    out
}

/// Recovers angles in `(0, pi]` from a Cholesky factor with unit-norm rows
/// and nonnegative diagonal. Angles that are undetermined because an
/// earlier sine vanished are set to pi/2.
pub fn angles_from_cholesky(l: &LowerTriangular) -> CorrelationAngles {
    let n = l.dim();
    let mut angles = CorrelationAngles::identity(n);
    for p in 1..n {
        let mut remaining = 1.0;
        for q in 0..p {
            let a = if remaining > 1e-300 {
                (l.get(p, q) / remaining).clamp(-1.0, 1.0).acos()
            } else {
                FRAC_PI_2
            };
            let a = a.max(f64::EPSILON);
            angles.set(p, q, a);
            remaining *= a.sin();
        }
    }
    angles
}

/// Cholesky factorization of a positive semi-definite matrix. Zero pivots
/// (within tolerance) produce zero columns.
pub fn cholesky_psd(sigma: &[Vec<f64>]) -> Result<LowerTriangular> {
    let n = sigma.len();
    let mut l = LowerTriangular::zeros(n);
    for (p, row) in sigma.iter().enumerate() {
        if row.len() != n {
            return Err(IfaError::Dimension(format!(
                "row {p} of a {n}x{n} matrix has length {}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(IfaError::NotPositiveSemiDefinite);
        }
    }
    let tol = 1e-10;
    for p in 0..n {
        for q in 0..=p {
            if (sigma[p][q] - sigma[q][p]).abs() > tol {
                return Err(IfaError::NotPositiveSemiDefinite);
            }
            let s: f64 = (0..q).map(|r| l.get(p, r) * l.get(q, r)).sum();
            if p == q {
                let d = sigma[p][p] - s;
                if d < -tol {
                    return Err(IfaError::NotPositiveSemiDefinite);
                }
                l.set(p, p, if d > 1e-14 { d.sqrt() } else { 0.0 });
            } else {
                let diag = l.get(q, q);
                let v = sigma[p][q] - s;
                if diag == 0.0 {
                    if v.abs() > 1e-8 {
                        return Err(IfaError::NotPositiveSemiDefinite);
                    }
                    l.set(p, q, 0.0);
                } else {
                    l.set(p, q, v / diag);
                }
            }
        }
    }
    Ok(l)
}
