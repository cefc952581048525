//! Type I error and power of the approximate test on real-valued data:
//! `Uniform(0, 1)` against `Uniform(s, 1 + s)`. Rows outside the overlap are
//! perfectly separable, so the best attainable accuracy is `1/2 + s/2` and
//! the effect size against tolerance `delta` is `s/2 - delta`.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{mean, require_replications, LongRow};
use crate::c2st::{power, run_on_patterns, ClassifierKind, Patterns};
use crate::error::{IfaError, Result};
use crate::rng::{derive_seed, seeded};

fn default_shifts() -> Vec<f64> {
    vec![0.05, 0.10]
}

fn default_delta() -> f64 {
    0.025
}

fn default_alpha() -> f64 {
    0.05
}

fn default_classifiers() -> Vec<ClassifierKind> {
    vec![ClassifierKind::knn(), ClassifierKind::neural()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_shifts")]
    pub shifts: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_classifiers")]
    pub classifiers: Vec<ClassifierKind>,
    pub replications: usize,
    pub seed: u64,
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        require_replications(self.replications, &self.sample_sizes)?;
        if self.shifts.is_empty() || self.classifiers.is_empty() {
            return Err(IfaError::InvalidArgument(
                "shift and classifier grids must be nonempty".into(),
            ));
        }
        if self.shifts.iter().any(|s| !(0.0..1.0).contains(s)) {
            return Err(IfaError::InvalidArgument("shifts must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Effect size of the shifted-uniform design.
pub fn uniform_effect(shift: f64, delta: f64) -> f64 {
    (0.5 * shift - delta).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub n: usize,
    pub shift: f64,
    pub classifier: String,
    pub replication: usize,
    pub acc: f64,
    pub p_value: f64,
    pub rejected: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCell {
    pub n: usize,
    pub shift: f64,
    pub classifier: String,
    pub epsilon: f64,
    pub replications: usize,
    pub rejection_rate: f64,
    pub mean_acc: f64,
    /// Power predicted from the normal approximation with `N_test = n`.
    pub predicted_power: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub delta: f64,
    pub cells: Vec<CalibrationCell>,
    pub records: Vec<CalibrationRecord>,
}

impl CalibrationReport {
    pub fn cell(&self, n: usize, shift: f64, classifier: &str) -> Option<&CalibrationCell> {
        self.cells
            .iter()
            .find(|c| c.n == n && c.shift == shift && c.classifier == classifier)
    }

    pub fn long_rows(&self) -> Vec<LongRow> {
        let mut rows = Vec::new();
        for c in &self.cells {
            for (metric, value) in [
                ("epsilon", c.epsilon),
                ("replications", c.replications as f64),
                ("rejection_rate", c.rejection_rate),
                ("mean_acc", c.mean_acc),
                ("predicted_power", c.predicted_power),
            ] {
                rows.push(LongRow {
                    study: "uniform_calibration".into(),
                    n: Some(c.n),
                    shift: Some(c.shift),
                    classifier: Some(c.classifier.clone()),
                    delta: Some(self.delta),
                    metric: metric.into(),
                    value,
                    ..Default::default()
                });
            }
        }
        rows
    }
}

/// `n` draws from `Uniform(0, 1)` and `n` from `Uniform(shift, 1 + shift)`.
pub fn shifted_uniform_samples(n: usize, shift: f64, seed: u64) -> (Patterns, Patterns) {
    let mut rng = seeded(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let y: Vec<f64> = (0..n).map(|_| shift + rng.random::<f64>()).collect();
    (
        Patterns::Real { cols: 1, values: x },
        Patterns::Real { cols: 1, values: y },
    )
}

pub fn summarize_calibration(cfg: &CalibrationConfig, records: &[CalibrationRecord]) -> Result<Vec<CalibrationCell>> {
    let mut cells = Vec::new();
    for &n in &cfg.sample_sizes {
        for &shift in &cfg.shifts {
            for kind in &cfg.classifiers {
                let name = kind.name();
                let ok: Vec<&CalibrationRecord> = records
                    .iter()
                    .filter(|r| r.n == n && r.shift == shift && r.classifier == name && r.error.is_none())
                    .collect();
                let rejections: Vec<f64> = ok.iter().map(|r| f64::from(u8::from(r.rejected))).collect();
                let accs: Vec<f64> = ok.iter().map(|r| r.acc).collect();
                let epsilon = uniform_effect(shift, cfg.delta);
                cells.push(CalibrationCell {
                    n,
                    shift,
                    classifier: name.into(),
                    epsilon,
                    replications: ok.len(),
                    rejection_rate: mean(&rejections),
                    mean_acc: mean(&accs),
                    predicted_power: power(cfg.alpha, n, cfg.delta, epsilon)?,
                });
            }
        }
    }
    Ok(cells)
}

pub fn run_uniform_calibration(cfg: &CalibrationConfig) -> Result<CalibrationReport> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for (ni, &n) in cfg.sample_sizes.iter().enumerate() {
        for (si, &shift) in cfg.shifts.iter().enumerate() {
            for (ci, kind) in cfg.classifiers.iter().enumerate() {
                for rep in 0..cfg.replications {
                    jobs.push((ni, n, si, shift, ci, kind, rep));
                }
            }
        }
    }
    let records = jobs
        .par_iter()
        .map(|&(ni, n, si, shift, ci, kind, rep)| {
            // Classifiers in the same cell see the same samples.
            let (real, synth) =
                shifted_uniform_samples(n, shift, derive_seed(cfg.seed, &[ni as u64, si as u64, rep as u64]));
            let seed = derive_seed(cfg.seed, &[ni as u64, si as u64, rep as u64, 1 + ci as u64]);
            let mut record = CalibrationRecord {
                n,
                shift,
                classifier: kind.name().into(),
                replication: rep,
                acc: f64::NAN,
                p_value: f64::NAN,
                rejected: false,
                error: None,
            };
            match run_on_patterns(&real, &synth, kind, cfg.delta, seed) {
                Ok(run) => {
                    record.acc = run.outcome.acc;
                    record.p_value = run.outcome.p_value;
                    record.rejected = run.outcome.rejects(cfg.alpha);
                }
                Err(e) => record.error = Some(e.to_string()),
            }
            record
        })
        .collect::<Vec<_>>();
    let cells = summarize_calibration(cfg, &records)?;
    Ok(CalibrationReport {
        delta: cfg.delta,
        cells,
        records,
    })
}
