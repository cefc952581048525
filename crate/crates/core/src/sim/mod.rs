//! Simulation studies: parameter recovery, calibration of the approximate
//! two-sample test on shifted uniforms, and misspecification detection.
//!
//! Replications run in parallel. Every replication draws its seeds from the
//! base seed and its position in the grid, so raw records do not depend on
//! the number of threads.

mod calibration;
mod misspec;
mod recovery;
mod report;

use serde::{Deserialize, Serialize};

pub use calibration::{
    run_uniform_calibration, shifted_uniform_samples, summarize_calibration, uniform_effect, CalibrationCell,
    CalibrationConfig, CalibrationRecord, CalibrationReport,
};
pub use misspec::{
    run_misspecification, summarize_misspecification, top_items, CandidateModel, MisspecCell, MisspecConfig,
    MisspecRecord, MisspecReport,
};
pub use recovery::{
    recovery_parameters, run_recovery, summarize_recovery, ParameterInfo, ParameterSummary, RecoveryCell,
    RecoveryConfig, RecoveryRecord, RecoveryReport,
};
pub use report::{write_long_csv, LongRow};

use crate::error::{IfaError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "snake_case")]
pub enum StudyConfig {
    Recovery(RecoveryConfig),
    UniformCalibration(CalibrationConfig),
    Misspecification(MisspecConfig),
}

impl StudyConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            StudyConfig::Recovery(_) => "recovery",
            StudyConfig::UniformCalibration(_) => "uniform_calibration",
            StudyConfig::Misspecification(_) => "misspecification",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            StudyConfig::Recovery(c) => c.seed,
            StudyConfig::UniformCalibration(c) => c.seed,
            StudyConfig::Misspecification(c) => c.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StudyConfig::Recovery(c) => c.validate(),
            StudyConfig::UniformCalibration(c) => c.validate(),
            StudyConfig::Misspecification(c) => c.validate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "snake_case")]
pub enum StudyReport {
    Recovery(RecoveryReport),
    UniformCalibration(CalibrationReport),
    Misspecification(MisspecReport),
}

impl StudyReport {
    pub fn long_rows(&self) -> Vec<LongRow> {
        match self {
            StudyReport::Recovery(r) => r.long_rows(),
            StudyReport::UniformCalibration(r) => r.long_rows(),
            StudyReport::Misspecification(r) => r.long_rows(),
        }
    }
}

/// Runs a study, on `jobs` worker threads when given.
pub fn run_study(config: &StudyConfig, jobs: Option<usize>) -> Result<StudyReport> {
    config.validate()?;
    let run = || match config {
        StudyConfig::Recovery(c) => run_recovery(c).map(StudyReport::Recovery),
        StudyConfig::UniformCalibration(c) => run_uniform_calibration(c).map(StudyReport::UniformCalibration),
        StudyConfig::Misspecification(c) => run_misspecification(c).map(StudyReport::Misspecification),
    };
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| IfaError::InvalidArgument(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}
