use serde::{Deserialize, Serialize};

use super::correlation::{
    angles_from_cholesky, cholesky_from_angles, cholesky_psd, CorrelationAngles, LowerTriangular,
};
use super::item::{intercepts_from_raw, raw_from_intercepts, ItemParams};
use super::sampling::GeneratingModel;
use super::spec::ModelSpec;
use crate::error::{IfaError, Result};

/// `beta_j = b_j + A_j beta'` for every item.
pub fn apply_constraints(spec: &ModelSpec, free: &[f64]) -> Result<Vec<Vec<f64>>> {
    if free.len() != spec.free_loadings {
        return Err(IfaError::Dimension(format!(
            "{} free loadings supplied, spec has {}",
            free.len(),
            spec.free_loadings
        )));
    }
    spec.constraints.iter().map(|c| c.apply(free)).collect()
}

/// Unconstrained model parameters as seen by the optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    /// Per item: `(a_1, d_2, .., d_{K-1})`.
    pub intercepts: Vec<Vec<f64>>,
    /// Model-wide free loading vector `beta'`.
    pub loadings: Vec<f64>,
    /// All correlation angles; fixed entries hold their fixed values.
    pub angles: CorrelationAngles,
}

/// Parameters in model form, ready for likelihood evaluation.
#[derive(Clone, Debug)]
pub struct Materialized {
    pub items: Vec<ItemParams>,
    pub cholesky: LowerTriangular,
}

impl Materialized {
    pub fn correlation(&self) -> Vec<Vec<f64>> {
        self.cholesky.to_correlation()
    }
}

impl ParameterSet {
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        if self.intercepts.len() != spec.n_items() {
            return Err(IfaError::Dimension(format!(
                "{} intercept vectors for {} items",
                self.intercepts.len(),
                spec.n_items()
            )));
        }
        for (j, (raw, &k)) in self.intercepts.iter().zip(&spec.categories).enumerate() {
            if raw.len() != k - 1 {
                return Err(IfaError::Dimension(format!(
                    "item {j}: {} intercepts for {k} categories",
                    raw.len()
                )));
            }
        }
        if self.loadings.len() != spec.free_loadings {
            return Err(IfaError::Dimension(format!(
                "{} free loadings, spec has {}",
                self.loadings.len(),
                spec.free_loadings
            )));
        }
        if self.angles.dim != spec.factors || self.angles.values.len() != spec.correlation.fixed.len() {
            return Err(IfaError::Dimension(format!(
                "angle matrix is {0}x{0}, spec has {1} factors",
                self.angles.dim, spec.factors
            )));
        }
        Ok(())
    }

    /// Builds a parameter set from model-form values. Fixed angles are taken
    /// from the spec regardless of `angles`.
    pub fn from_model(
        spec: &ModelSpec,
        intercepts: &[Vec<f64>],
        free_loadings: Vec<f64>,
        angles: CorrelationAngles,
    ) -> Result<Self> {
        let raw = intercepts
            .iter()
            .map(|a| raw_from_intercepts(a))
            .collect::<Result<Vec<_>>>()?;
        let mut set = Self {
            intercepts: raw,
            loadings: free_loadings,
            angles,
        };
        set.check(spec)?;
        set.angles.validate()?;
        set.pin_fixed_angles(spec);
        Ok(set)
    }

    pub(crate) fn pin_fixed_angles(&mut self, spec: &ModelSpec) {
        for (a, f) in self.angles.values.iter_mut().zip(&spec.correlation.fixed) {
            if let Some(v) = f {
                *a = *v;
            }
        }
    }

    pub fn materialize(&self, spec: &ModelSpec) -> Result<Materialized> {
        self.check(spec)?;
        let loadings = apply_constraints(spec, &self.loadings)?;
        let items = self
            .intercepts
            .iter()
            .zip(loadings)
            .map(|(raw, beta)| ItemParams {
                intercepts: intercepts_from_raw(raw),
                loadings: beta,
            })
            .collect();
        Ok(Materialized {
            items,
            cholesky: cholesky_from_angles(&self.angles),
        })
    }

    pub fn to_generating_model(&self, spec: &ModelSpec) -> Result<GeneratingModel> {
        let m = self.materialize(spec)?;
        let correlation = m.correlation();
        Ok(GeneratingModel {
            items: m.items,
            correlation,
        })
    }

    /// Maps free angles back into `(0, pi]` without changing `Sigma`, by
    /// refactoring `Sigma` with a nonnegative Cholesky diagonal.
    pub fn canonicalize_angles(&mut self, spec: &ModelSpec) -> Result<()> {
        if spec.factors < 2 {
            return Ok(());
        }
        let sigma = cholesky_from_angles(&self.angles).to_correlation();
        let l = cholesky_psd(&sigma)?;
        self.angles = angles_from_cholesky(&l);
        self.pin_fixed_angles(spec);
        Ok(())
    }

    /// Whether `z_p -> -z_p` can be absorbed by negating free parameters:
    /// factor `p` has no fixed nonzero loadings and its free loading
    /// parameters enter no other factor.
    pub fn can_flip_factor(spec: &ModelSpec, p: usize) -> bool {
        if spec.constraints.iter().any(|c| c.offset[p] != 0.0) {
            return false;
        }
        (0..spec.free_loadings).all(|m| {
            let on_p = spec.constraints.iter().any(|c| c.map[p][m] != 0.0);
            let elsewhere = spec
                .constraints
                .iter()
                .any(|c| (0..spec.factors).any(|q| q != p && c.map[q][m] != 0.0));
            !(on_p && elsewhere)
        })
    }

    /// Reflects factor `p`: its loadings and its correlations with the other
    /// factors change sign. The likelihood is unchanged.
    pub fn flip_factor(&mut self, spec: &ModelSpec, p: usize) -> Result<()> {
        if !Self::can_flip_factor(spec, p) {
            return Err(IfaError::InvalidArgument(format!(
                "factor {p} cannot be reflected under the loading constraints"
            )));
        }
        for m in 0..spec.free_loadings {
            if spec.constraints.iter().any(|c| c.map[p][m] != 0.0) {
                self.loadings[m] = -self.loadings[m];
            }
        }
        let mut sigma = cholesky_from_angles(&self.angles).to_correlation();
        for q in 0..spec.factors {
            if q != p {
                sigma[p][q] = -sigma[p][q];
                sigma[q][p] = -sigma[q][p];
            }
        }
        self.angles = angles_from_cholesky(&cholesky_psd(&sigma)?);
        self.pin_fixed_angles(spec);
        Ok(())
    }

    /// Number of scalar parameters in the flat layout.
    pub fn flat_len(&self, spec: &ModelSpec) -> usize {
        self.intercepts.iter().map(Vec::len).sum::<usize>() + self.loadings.len() + spec.n_free_angles()
    }

    /// Flat layout: raw intercepts item by item, free loadings, free angles.
    pub fn to_flat(&self, spec: &ModelSpec) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len(spec));
        for raw in &self.intercepts {
            out.extend_from_slice(raw);
        }
        out.extend_from_slice(&self.loadings);
        for (v, f) in self.angles.values.iter().zip(&spec.correlation.fixed) {
            if f.is_none() {
                out.push(*v);
            }
        }
        out
    }

    pub fn set_flat(&mut self, spec: &ModelSpec, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for raw in &mut self.intercepts {
            for v in raw.iter_mut() {
                *v = it.next().expect("flat vector too short");
            }
        }
        for v in &mut self.loadings {
            *v = it.next().expect("flat vector too short");
        }
        for (v, f) in self.angles.values.iter_mut().zip(&spec.correlation.fixed) {
            if f.is_none() {
                *v = it.next().expect("flat vector too short");
            }
        }
    }
}
