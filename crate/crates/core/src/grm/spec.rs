use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{IfaError, Result};

/// Linear loading constraint `beta_j = offset + map * free`, where `free` is
/// the model-wide vector of free loading parameters. Ties across items are
/// expressed by two items' maps selecting the same free parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadingConstraint {
    pub offset: Vec<f64>,
    /// `factors` rows by `free_loadings` columns.
    pub map: Vec<Vec<f64>>,
}

impl LoadingConstraint {
    pub fn apply(&self, free: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.offset.len()];
        self.apply_into(free, &mut out)?;
        Ok(out)
    }

    pub(crate) fn apply_into(&self, free: &[f64], out: &mut [f64]) -> Result<()> {
        if out.len() != self.offset.len() {
            return Err(IfaError::Dimension(format!(
                "loading output has length {}, constraint has {} factors",
                out.len(),
                self.offset.len()
            )));
        }
        for (p, (row, b)) in self.map.iter().zip(&self.offset).enumerate() {
            if row.len() != free.len() {
                return Err(IfaError::Dimension(format!(
                    "constraint row {p} has {} columns but {} free loadings were supplied",
                    row.len(),
                    free.len()
                )));
            }
            out[p] = b + row.iter().zip(free).map(|(a, f)| a * f).sum::<f64>();
        }
        Ok(())
    }

    /// Accumulates `map^T * grad_loadings` into `out`.
    pub fn pull_back(&self, grad_loadings: &[f64], out: &mut [f64]) {
        for (row, g) in self.map.iter().zip(grad_loadings) {
            if *g == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * g;
            }
        }
    }

    /// True when loading `p` is identically zero under this constraint.
    pub fn is_structural_zero(&self, p: usize) -> bool {
        self.offset[p] == 0.0 && self.map[p].iter().all(|&a| a == 0.0)
    }
}

/// Which hyperspherical angles are estimated. One entry per strictly-lower
/// angle in row-major order; `None` marks a free angle, `Some(v)` an angle
/// fixed at `v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStructure {
    pub fixed: Vec<Option<f64>>,
}

impl CorrelationStructure {
    pub fn free(factors: usize) -> Self {
        Self {
            fixed: vec![None; angle_count(factors)],
        }
    }

    /// All factors uncorrelated.
    pub fn orthogonal(factors: usize) -> Self {
        Self {
            fixed: vec![Some(std::f64::consts::FRAC_PI_2); angle_count(factors)],
        }
    }

    /// Makes factor `p` uncorrelated with every other factor by fixing every
    /// angle in row `p` and column `p` at pi/2.
    pub fn make_orthogonal(&mut self, factors: usize, p: usize) {
        for q in 0..factors {
            if q < p {
                self.fixed[angle_index(p, q)] = Some(std::f64::consts::FRAC_PI_2);
            } else if q > p {
                self.fixed[angle_index(q, p)] = Some(std::f64::consts::FRAC_PI_2);
            }
        }
    }

    pub fn is_free(&self, idx: usize) -> bool {
        self.fixed[idx].is_none()
    }

    pub fn n_free(&self) -> usize {
        self.fixed.iter().filter(|f| f.is_none()).count()
    }
}

pub(crate) fn angle_count(factors: usize) -> usize {
    factors * factors.saturating_sub(1) / 2
}

/// Position of angle `(p, q)`, `q < p`, in the packed strictly-lower layout.
pub(crate) fn angle_index(p: usize, q: usize) -> usize {
    debug_assert!(q < p);
    p * (p - 1) / 2 + q
}

/// One cell of the compact loading pattern.
#[derive(Clone, Debug, PartialEq)]
pub enum LoadingPattern {
    Free,
    Fixed(f64),
    /// Loadings sharing a tie-group name are constrained equal.
    Tied(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Categories per item, `K_j >= 2`.
    pub categories: Vec<usize>,
    pub factors: usize,
    pub free_loadings: usize,
    pub constraints: Vec<LoadingConstraint>,
    pub correlation: CorrelationStructure,
}

impl ModelSpec {
    pub fn new(
        categories: Vec<usize>,
        factors: usize,
        free_loadings: usize,
        constraints: Vec<LoadingConstraint>,
        correlation: CorrelationStructure,
    ) -> Result<Self> {
        let spec = Self {
            categories,
            factors,
            free_loadings,
            constraints,
            correlation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Independence model with no latent factors.
    pub fn zero_factor(categories: Vec<usize>) -> Result<Self> {
        let constraints = categories
            .iter()
            .map(|_| LoadingConstraint {
                offset: vec![],
                map: vec![],
            })
            .collect();
        Self::new(categories, 0, 0, constraints, CorrelationStructure::free(0))
    }

    /// Each item loads freely on exactly one factor; factor correlations free.
    pub fn simple_structure(categories: Vec<usize>, assignment: &[usize], factors: usize) -> Result<Self> {
        if assignment.len() != categories.len() {
            return Err(IfaError::Dimension(format!(
                "{} item assignments for {} items",
                assignment.len(),
                categories.len()
            )));
        }
        let pattern = assignment
            .iter()
            .map(|&f| {
                (0..factors)
                    .map(|p| {
                        if p == f {
                            LoadingPattern::Free
                        } else {
                            LoadingPattern::Fixed(0.0)
                        }
                    })
                    .collect()
            })
            .collect::<Vec<Vec<_>>>();
        Self::from_pattern(categories, factors, &pattern, CorrelationStructure::free(factors))
    }

    /// Compiles a per-loading pattern into explicit `(offset, map)` pairs.
    /// Free cells each get their own parameter; tied cells share one
    /// parameter per group name, numbered in order of first appearance.
    pub fn from_pattern(
        categories: Vec<usize>,
        factors: usize,
        pattern: &[Vec<LoadingPattern>],
        correlation: CorrelationStructure,
    ) -> Result<Self> {
        if pattern.len() != categories.len() {
            return Err(IfaError::Spec(format!(
                "loading pattern has {} rows but there are {} items",
                pattern.len(),
                categories.len()
            )));
        }
        let mut groups: BTreeMap<&str, usize> = BTreeMap::new();
        let mut cells: Vec<Vec<Option<usize>>> = Vec::with_capacity(pattern.len());
        let mut offsets = Vec::with_capacity(pattern.len());
        let mut next = 0usize;
        for (j, row) in pattern.iter().enumerate() {
            if row.len() != factors {
                return Err(IfaError::Spec(format!(
                    "item {j}: loading pattern has {} entries, expected {factors}",
                    row.len()
                )));
            }
            let mut item_cells = Vec::with_capacity(factors);
            let mut offset = vec![0.0; factors];
            for (p, cell) in row.iter().enumerate() {
                let slot = match cell {
                    LoadingPattern::Free => {
                        next += 1;
                        Some(next - 1)
                    }
                    LoadingPattern::Fixed(v) => {
                        if !v.is_finite() {
                            return Err(IfaError::Spec(format!(
                                "item {j}, factor {p}: fixed loading must be finite"
                            )));
                        }
                        offset[p] = *v;
                        None
                    }
                    LoadingPattern::Tied(name) => Some(*groups.entry(name.as_str()).or_insert_with(|| {
                        next += 1;
                        next - 1
                    })),
                };
                item_cells.push(slot);
            }
            cells.push(item_cells);
            offsets.push(offset);
        }
        let constraints = cells
            .into_iter()
            .zip(offsets)
            .map(|(item_cells, offset)| {
                let map = item_cells
                    .iter()
                    .map(|slot| {
                        let mut row = vec![0.0; next];
                        if let Some(m) = slot {
                            row[*m] = 1.0;
                        }
                        row
                    })
                    .collect();
                LoadingConstraint { offset, map }
            })
            .collect();
        Self::new(categories, factors, next, constraints, correlation)
    }

    pub fn n_items(&self) -> usize {
        self.categories.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.factors;
        for (j, &k) in self.categories.iter().enumerate() {
            if k < 2 {
                return Err(IfaError::Spec(format!(
                    "item {j} has {k} categories; at least 2 are required"
                )));
            }
            if k > u16::MAX as usize {
                return Err(IfaError::Spec(format!("item {j} has too many categories ({k})")));
            }
        }
        if self.constraints.len() != self.categories.len() {
            return Err(IfaError::Spec(format!(
                "{} loading constraints for {} items",
                self.constraints.len(),
                self.categories.len()
            )));
        }
        for (j, c) in self.constraints.iter().enumerate() {
            if c.offset.len() != p || c.map.len() != p {
                return Err(IfaError::Spec(format!(
                    "item {j}: constraint must have {p} rows (offset {}, map {})",
                    c.offset.len(),
                    c.map.len()
                )));
            }
            if let Some(bad) = c.map.iter().position(|row| row.len() != self.free_loadings) {
                return Err(IfaError::Spec(format!(
                    "item {j}: constraint row {bad} must have {} columns",
                    self.free_loadings
                )));
            }
            if c.offset.iter().chain(c.map.iter().flatten()).any(|v| !v.is_finite()) {
                return Err(IfaError::Spec(format!("item {j}: constraint has non-finite entries")));
            }
        }
        if self.correlation.fixed.len() != angle_count(p) {
            return Err(IfaError::Spec(format!(
                "correlation structure has {} angles, expected {}",
                self.correlation.fixed.len(),
                angle_count(p)
            )));
        }
        for v in self.correlation.fixed.iter().flatten() {
            if !(*v > 0.0 && *v <= std::f64::consts::PI) {
                return Err(IfaError::Spec(format!("fixed angle {v} outside (0, pi]")));
            }
        }
        Ok(())
    }

    /// Number of loadings on factor `p` that are not structurally zero.
    pub fn nonzero_loadings(&self, p: usize) -> usize {
        self.constraints.iter().filter(|c| !c.is_structural_zero(p)).count()
    }

    /// Factor each free loading parameter primarily loads on (the first
    /// factor whose map row selects it).
    pub fn free_loading_factor(&self, m: usize) -> Option<usize> {
        (0..self.factors).find(|&p| self.constraints.iter().any(|c| c.map[p][m] != 0.0))
    }

    pub fn n_free_intercepts(&self) -> usize {
        self.categories.iter().map(|k| k - 1).sum()
    }

    pub fn n_free_angles(&self) -> usize {
        self.correlation.n_free()
    }

    /// Total number of fitted parameters: intercepts, free loadings and free
    /// correlation angles.
    pub fn parameter_count(&self) -> usize {
        self.n_free_intercepts() + self.free_loadings + self.n_free_angles()
    }

    /// Identification sanity warnings (not errors).
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for p in 0..self.factors {
            let free = (0..self.free_loadings).any(|m| self.constraints.iter().any(|c| c.map[p][m] != 0.0));
            if !free {
                out.push(format!("factor {p} has no free loadings"));
            }
        }
        for m in 0..self.free_loadings {
            if self.free_loading_factor(m).is_none() {
                out.push(format!("free loading parameter {m} does not enter any loading"));
            }
        }
        out
    }
}
