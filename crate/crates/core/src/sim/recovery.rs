//! Parameter recovery: bias and mean squared error of fitted parameters
//! over replicated data sets.

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{mean, median, require_replications, LongRow};
use crate::error::{IfaError, Result};
use crate::grm::{sample_responses, GeneratingModel, ModelSpec};
use crate::iwave::{fit, FitConfig, FitResult};
use crate::rng::derive_seed;

fn default_flag_threshold() -> f64 {
    5.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub generating: GeneratingModel,
    /// Model fitted to each data set.
    pub spec: ModelSpec,
    pub sample_sizes: Vec<usize>,
    pub iw_samples: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    /// Template for every fit; its seed and `iw_samples` are overridden.
    #[serde(default)]
    pub fit: FitConfig,
    /// A replication whose final IW-ELBO falls more than this many
    /// standard errors below the cell median is refitted once.
    #[serde(default = "default_flag_threshold")]
    pub flag_threshold: f64,
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        require_replications(self.replications, &self.sample_sizes)?;
        if self.iw_samples.is_empty() || self.iw_samples.contains(&0) {
            return Err(IfaError::InvalidArgument(
                "importance-sample grid must be nonempty and positive".into(),
            ));
        }
        if self.generating.categories() != self.spec.categories || self.generating.factors() != self.spec.factors {
            return Err(IfaError::Dimension("generating model and fitted spec disagree".into()));
        }
        self.spec.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterInfo {
    pub name: String,
    pub truth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRecord {
    pub n: usize,
    pub iw_samples: usize,
    pub replication: usize,
    /// 0 for the first fit, 1 for a refit.
    pub attempt: usize,
    pub seed: u64,
    pub steps: usize,
    pub converged: bool,
    pub seconds: f64,
    pub elbo: Option<f64>,
    pub elbo_se: Option<f64>,
    pub flagged: bool,
    /// Whether this record enters the cell summaries.
    pub used: bool,
    /// Estimates in the order of [`RecoveryReport::parameters`].
    pub estimates: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCell {
    pub n: usize,
    pub iw_samples: usize,
    pub replications: usize,
    pub failures: usize,
    pub refits: usize,
    pub mean_seconds: f64,
    pub parameters: Vec<ParameterSummary>,
}

impl RecoveryCell {
    pub fn get(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub parameters: Vec<ParameterInfo>,
    pub cells: Vec<RecoveryCell>,
    pub records: Vec<RecoveryRecord>,
}

impl RecoveryReport {
    pub fn cell(&self, n: usize, iw_samples: usize) -> Option<&RecoveryCell> {
        self.cells.iter().find(|c| c.n == n && c.iw_samples == iw_samples)
    }

    pub fn long_rows(&self) -> Vec<LongRow> {
        let mut rows = Vec::new();
        for c in &self.cells {
            let base = LongRow {
                study: "recovery".into(),
                n: Some(c.n),
                iw_samples: Some(c.iw_samples),
                ..Default::default()
            };
            for p in &c.parameters {
                for (metric, value) in [("truth", p.truth), ("bias", p.bias), ("mse", p.mse)] {
                    rows.push(LongRow {
                        parameter: Some(p.name.clone()),
                        metric: metric.into(),
                        value,
                        ..base.clone()
                    });
                }
            }
            for (metric, value) in [
                ("replications", c.replications as f64),
                ("failures", c.failures as f64),
                ("refits", c.refits as f64),
                ("mean_seconds", c.mean_seconds),
            ] {
                rows.push(LongRow {
                    metric: metric.into(),
                    value,
                    ..base.clone()
                });
            }
        }
        rows
    }
}

/// Loadings the fitted spec does not fix, every intercept, and free
/// correlations, with their generating values.
pub fn recovery_parameters(generating: &GeneratingModel, spec: &ModelSpec) -> Vec<ParameterInfo> {
    let mut out = Vec::new();
    for (j, item) in generating.items.iter().enumerate() {
        for (k, &a) in item.intercepts.iter().enumerate() {
            out.push(ParameterInfo {
                name: format!("intercept[{j}][{k}]"),
                truth: a,
            });
        }
    }
    for (j, (item, c)) in generating.items.iter().zip(&spec.constraints).enumerate() {
        for (q, &b) in item.loadings.iter().enumerate() {
            if !c.is_structural_zero(q) {
                out.push(ParameterInfo {
                    name: format!("loading[{j}][{q}]"),
                    truth: b,
                });
            }
        }
    }
    let mut idx = 0;
    for p in 1..spec.factors {
        for q in 0..p {
            if spec.correlation.is_free(idx) {
                out.push(ParameterInfo {
                    name: format!("correlation[{p}][{q}]"),
                    truth: generating.correlation[p][q],
                });
            }
            idx += 1;
        }
    }
    out
}

fn extract(result: &FitResult, names: &[ParameterInfo]) -> Vec<f64> {
    names
        .iter()
        .map(|p| {
            let ix: Vec<usize> = p.name.split(['[', ']']).filter_map(|s| s.parse().ok()).collect();
            if p.name.starts_with("intercept") {
                result.items[ix[0]].intercepts[ix[1]]
            } else if p.name.starts_with("loading") {
                result.items[ix[0]].loadings[ix[1]]
            } else {
                result.correlation[ix[0]][ix[1]]
            }
        })
        .collect()
}

struct Cell {
    n_index: usize,
    n: usize,
    r: usize,
}

fn cells(cfg: &RecoveryConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for (n_index, &n) in cfg.sample_sizes.iter().enumerate() {
        for &r in &cfg.iw_samples {
            out.push(Cell { n_index, n, r });
        }
    }
    out
}

fn replicate(
    cfg: &RecoveryConfig,
    names: &[ParameterInfo],
    cell_index: usize,
    cell: &Cell,
    rep: usize,
    attempt: usize,
) -> RecoveryRecord {
    // Data depend on the sample size and replication only, so cells that
    // differ in R see the same data sets.
    let data_seed = derive_seed(cfg.seed, &[0, cell.n_index as u64, rep as u64]);
    let seed = derive_seed(cfg.seed, &[1, cell_index as u64, rep as u64, attempt as u64]);
    let mut record = RecoveryRecord {
        n: cell.n,
        iw_samples: cell.r,
        replication: rep,
        attempt,
        seed,
        steps: 0,
        converged: false,
        seconds: 0.0,
        elbo: None,
        elbo_se: None,
        flagged: false,
        used: true,
        estimates: Vec::new(),
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let data = sample_responses(&cfg.generating, cell.n, data_seed)?;
        let fit_cfg = FitConfig {
            iw_samples: cell.r,
            seed,
            ..cfg.fit.clone()
        };
        let mut result = fit(&data, &cfg.spec, &fit_cfg)?;
        let reference: Vec<Vec<f64>> = cfg.generating.items.iter().map(|i| i.loadings.clone()).collect();
        result.align_to(&reference)?;
        let (elbo, se) = result.evaluate(&data, cell.r, derive_seed(seed, &[7]))?;
        record.steps = result.steps;
        record.converged = result.converged;
        record.seconds = result.seconds;
        record.elbo = Some(elbo);
        record.elbo_se = Some(se);
        record.estimates = extract(&result, names);
        Ok(())
    })();
    if let Err(e) = outcome {
        record.error = Some(e.to_string());
    }
    record
}

/// Per-cell bias and MSE over the records marked `used` that carry
/// estimates.
pub fn summarize_recovery(
    cfg: &RecoveryConfig,
    names: &[ParameterInfo],
    records: &[RecoveryRecord],
) -> Vec<RecoveryCell> {
    cells(cfg)
        .iter()
        .map(|cell| {
            let in_cell: Vec<&RecoveryRecord> = records
                .iter()
                .filter(|r| r.n == cell.n && r.iw_samples == cell.r)
                .collect();
            let used: Vec<&RecoveryRecord> = in_cell
                .iter()
                .copied()
                .filter(|r| r.used && r.error.is_none())
                .collect();
            let parameters = names
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let errs: Vec<f64> = used.iter().map(|r| r.estimates[i] - p.truth).collect();
                    let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
                    ParameterSummary {
                        name: p.name.clone(),
                        truth: p.truth,
                        bias: mean(&errs),
                        mse: mean(&sq),
                    }
                })
                .collect();
            let secs: Vec<f64> = used.iter().map(|r| r.seconds).collect();
            RecoveryCell {
                n: cell.n,
                iw_samples: cell.r,
                replications: used.len(),
                failures: in_cell.iter().filter(|r| r.used && r.error.is_some()).count(),
                refits: in_cell.iter().filter(|r| r.attempt > 0).count(),
                mean_seconds: mean(&secs),
                parameters,
            }
        })
        .collect()
}

fn flag_cell(records: &mut [RecoveryRecord], threshold: f64) {
    let elbos: Vec<f64> = records.iter().filter_map(|r| r.elbo).collect();
    let med = median(&elbos);
    for r in records.iter_mut() {
        r.flagged = match (r.elbo, r.elbo_se) {
            (Some(e), Some(se)) => e < med - threshold * se,
            _ => true,
        };
    }
}

pub fn run_recovery(cfg: &RecoveryConfig) -> Result<RecoveryReport> {
    cfg.validate()?;
    let names = recovery_parameters(&cfg.generating, &cfg.spec);
    let grid = cells(cfg);
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..cfg.replications).map(move |rep| (c, rep)))
        .collect();
    let mut records: Vec<RecoveryRecord> = jobs
        .par_iter()
        .map(|&(c, rep)| replicate(cfg, &names, c, &grid[c], rep, 0))
        .collect();
    // Poor local maxima and failed fits get one refit on a fresh seed.
    for chunk in records.chunks_mut(cfg.replications) {
        flag_cell(chunk, cfg.flag_threshold);
    }
    let redo: Vec<(usize, usize)> = jobs
        .iter()
        .zip(&records)
        .filter(|(_, r)| r.flagged)
        .map(|(&job, _)| job)
        .collect();
    info!(
        "recovery: {} of {} replications flagged for a refit",
        redo.len(),
        records.len()
    );
    let refits: Vec<RecoveryRecord> = redo
        .par_iter()
        .map(|&(c, rep)| replicate(cfg, &names, c, &grid[c], rep, 1))
        .collect();
    for ((c, rep), refit) in redo.into_iter().zip(refits) {
        records[c * cfg.replications + rep].used = false;
        records.push(refit);
    }
    let cells = summarize_recovery(cfg, &names, &records);
    Ok(RecoveryReport {
        parameters: names,
        cells,
        records,
    })
}
