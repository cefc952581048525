//! Misspecification detection: data from one generating model, several
//! candidate models fitted to each data set, and each fit checked with the
//! exact and approximate tests, the relative fit index against the
//! zero-factor baseline, and permutation importances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{mean, median, require_replications, LongRow};
use crate::c2st::{count_parameters, rfi, run_c2st, ClassifierKind};
use crate::error::{IfaError, Result};
use crate::grm::{sample_responses, zero_factor_mle, GeneratingModel, ModelSpec};
use crate::iwave::{fit, FitConfig};
use crate::rng::derive_seed;

fn default_deltas() -> Vec<f64> {
    vec![0.0, 0.025]
}

fn default_alpha() -> f64 {
    0.05
}

fn default_importance_reps() -> usize {
    5
}

fn default_classifiers() -> Vec<ClassifierKind> {
    vec![ClassifierKind::neural()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateModel {
    pub name: String,
    pub spec: ModelSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisspecConfig {
    pub generating: GeneratingModel,
    pub models: Vec<CandidateModel>,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default = "default_classifiers")]
    pub classifiers: Vec<ClassifierKind>,
    /// Tolerances tested; 0 is the exact test.
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Shuffles per item for permutation importance; 0 skips it.
    #[serde(default = "default_importance_reps")]
    pub importance_reps: usize,
}

impl MisspecConfig {
    pub fn validate(&self) -> Result<()> {
        require_replications(self.replications, &self.sample_sizes)?;
        if self.models.is_empty() || self.classifiers.is_empty() || self.deltas.is_empty() {
            return Err(IfaError::InvalidArgument(
                "model, classifier and tolerance lists must be nonempty".into(),
            ));
        }
        for m in &self.models {
            m.spec.validate()?;
            if m.spec.categories != self.generating.categories() {
                return Err(IfaError::Dimension(format!(
                    "model '{}' has different items than the data",
                    m.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisspecRecord {
    pub n: usize,
    pub model: String,
    pub classifier: String,
    pub replication: usize,
    pub acc: f64,
    /// One p-value per configured tolerance.
    pub p_values: Vec<f64>,
    pub acc_base: f64,
    pub m_prop: usize,
    pub m_base: usize,
    pub rfi: Option<f64>,
    pub importance: Vec<f64>,
    pub fit_steps: usize,
    pub fit_converged: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisspecCell {
    pub n: usize,
    pub model: String,
    pub classifier: String,
    pub replications: usize,
    /// `(delta, rejection rate)` per tolerance.
    pub rejection_rates: Vec<(f64, f64)>,
    pub mean_acc: f64,
    pub median_rfi: f64,
    pub mean_importance: Vec<f64>,
}

impl MisspecCell {
    pub fn rejection_rate(&self, delta: f64) -> Option<f64> {
        self.rejection_rates.iter().find(|r| r.0 == delta).map(|r| r.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisspecReport {
    pub cells: Vec<MisspecCell>,
    pub records: Vec<MisspecRecord>,
}

impl MisspecReport {
    pub fn cell(&self, n: usize, model: &str, classifier: &str) -> Option<&MisspecCell> {
        self.cells
            .iter()
            .find(|c| c.n == n && c.model == model && c.classifier == classifier)
    }

    pub fn long_rows(&self) -> Vec<LongRow> {
        let mut rows = Vec::new();
        for c in &self.cells {
            let base = LongRow {
                study: "misspecification".into(),
                n: Some(c.n),
                model: Some(c.model.clone()),
                classifier: Some(c.classifier.clone()),
                ..Default::default()
            };
            for &(delta, rate) in &c.rejection_rates {
                rows.push(LongRow {
                    delta: Some(delta),
                    metric: "rejection_rate".into(),
                    value: rate,
                    ..base.clone()
                });
            }
            for (metric, value) in [
                ("replications", c.replications as f64),
                ("mean_acc", c.mean_acc),
                ("median_rfi", c.median_rfi),
            ] {
                rows.push(LongRow {
                    metric: metric.into(),
                    value,
                    ..base.clone()
                });
            }
            for (j, &v) in c.mean_importance.iter().enumerate() {
                rows.push(LongRow {
                    parameter: Some(format!("item[{j}]")),
                    metric: "mean_importance".into(),
                    value: v,
                    ..base.clone()
                });
            }
        }
        rows
    }
}

/// Indices of the `k` largest values, largest first.
pub fn top_items(importance: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..importance.len()).collect();
    idx.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn summarize_misspecification(cfg: &MisspecConfig, records: &[MisspecRecord]) -> Vec<MisspecCell> {
    let mut cells = Vec::new();
    for &n in &cfg.sample_sizes {
        for m in &cfg.models {
            for kind in &cfg.classifiers {
                let ok: Vec<&MisspecRecord> = records
                    .iter()
                    .filter(|r| r.n == n && r.model == m.name && r.classifier == kind.name() && r.error.is_none())
                    .collect();
                let rejection_rates = cfg
                    .deltas
                    .iter()
                    .enumerate()
                    .map(|(d, &delta)| {
                        let rej: Vec<f64> = ok
                            .iter()
                            .map(|r| f64::from(u8::from(r.p_values[d] < cfg.alpha)))
                            .collect();
                        (delta, mean(&rej))
                    })
                    .collect();
                let accs: Vec<f64> = ok.iter().map(|r| r.acc).collect();
                let rfis: Vec<f64> = ok.iter().filter_map(|r| r.rfi).collect();
                let width = ok.iter().map(|r| r.importance.len()).max().unwrap_or(0);
                let mean_importance = (0..width)
                    .map(|j| {
                        let v: Vec<f64> = ok.iter().filter_map(|r| r.importance.get(j).copied()).collect();
                        mean(&v)
                    })
                    .collect();
                cells.push(MisspecCell {
                    n,
                    model: m.name.clone(),
                    classifier: kind.name().into(),
                    replications: ok.len(),
                    rejection_rates,
                    mean_acc: mean(&accs),
                    median_rfi: median(&rfis),
                    mean_importance,
                });
            }
        }
    }
    cells
}

fn replicate(cfg: &MisspecConfig, ni: usize, n: usize, rep: usize) -> Vec<MisspecRecord> {
    let path = |tag: u64, extra: u64| derive_seed(cfg.seed, &[ni as u64, rep as u64, tag, extra]);
    let blank = |model: &str, classifier: &str| MisspecRecord {
        n,
        model: model.into(),
        classifier: classifier.into(),
        replication: rep,
        acc: f64::NAN,
        p_values: Vec::new(),
        acc_base: f64::NAN,
        m_prop: 0,
        m_base: 0,
        rfi: None,
        importance: Vec::new(),
        fit_steps: 0,
        fit_converged: false,
        error: None,
    };
    let data = match sample_responses(&cfg.generating, n, path(0, 0)) {
        Ok(d) => d,
        Err(e) => {
            return cfg
                .models
                .iter()
                .flat_map(|m| {
                    cfg.classifiers.iter().map(|k| MisspecRecord {
                        error: Some(e.to_string()),
                        ..blank(&m.name, k.name())
                    })
                })
                .collect()
        }
    };
    // The baseline test uses its own split, independent of the candidates.
    let baseline_spec = ModelSpec::zero_factor(data.categories().to_vec());
    let m_base = baseline_spec.as_ref().map(count_parameters).unwrap_or(0);
    let base_acc: Vec<Result<f64>> = cfg
        .classifiers
        .iter()
        .enumerate()
        .map(|(c, kind)| {
            let base = zero_factor_mle(&data)?;
            Ok(run_c2st(&base, &data, kind, 0.0, path(1, c as u64))?.outcome.acc)
        })
        .collect();
    let mut out = Vec::new();
    for (mi, m) in cfg.models.iter().enumerate() {
        let fit_cfg = FitConfig {
            seed: path(2, mi as u64),
            ..cfg.fit.clone()
        };
        let fitted = fit(&data, &m.spec, &fit_cfg);
        for (c, kind) in cfg.classifiers.iter().enumerate() {
            let mut rec = blank(&m.name, kind.name());
            rec.m_base = m_base;
            rec.m_prop = count_parameters(&m.spec);
            let result = (|| -> Result<()> {
                let f = fitted.as_ref().map_err(|e| IfaError::Numerical(e.to_string()))?;
                rec.fit_steps = f.steps;
                rec.fit_converged = f.converged;
                let run = run_c2st(f, &data, kind, 0.0, path(3, (mi * cfg.classifiers.len() + c) as u64))?;
                rec.acc = run.outcome.acc;
                rec.p_values = cfg
                    .deltas
                    .iter()
                    .map(|&d| run.outcome.with_delta(d).map(|o| o.p_value))
                    .collect::<Result<_>>()?;
                match &base_acc[c] {
                    Ok(acc_base) => {
                        rec.acc_base = *acc_base;
                        rec.rfi = rfi(rec.acc, *acc_base, rec.m_prop, m_base).ok().map(|r| r.rfi);
                    }
                    Err(e) => return Err(IfaError::Numerical(format!("baseline test failed: {e}"))),
                }
                if cfg.importance_reps > 0 {
                    rec.importance = run.permutation_importance(
                        cfg.importance_reps,
                        path(4, (mi * cfg.classifiers.len() + c) as u64),
                    )?;
                }
                Ok(())
            })();
            if let Err(e) = result {
                rec.error = Some(e.to_string());
            }
            out.push(rec);
        }
    }
    out
}

pub fn run_misspecification(cfg: &MisspecConfig) -> Result<MisspecReport> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize, usize)> = cfg
        .sample_sizes
        .iter()
        .enumerate()
        .flat_map(|(ni, &n)| (0..cfg.replications).map(move |rep| (ni, n, rep)))
        .collect();
    let records: Vec<MisspecRecord> = jobs
        .par_iter()
        .flat_map_iter(|&(ni, n, rep)| replicate(cfg, ni, n, rep))
        .collect();
    let cells = summarize_misspecification(cfg, &records);
    Ok(MisspecReport { cells, records })
}
