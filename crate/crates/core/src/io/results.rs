use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::Result;
use crate::iwave::FitResult;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation, sufficient to re-run it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Command line as invoked.
    pub args: Vec<String>,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub started: String,
    pub finished: Option<String>,
    pub outputs: Vec<String>,
}

pub fn timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, args: Vec<String>, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            args,
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            started: timestamp(),
            finished: None,
            outputs: Vec::new(),
        }
    }

    /// Stamps the finish time, records `outputs` and writes the manifest
    /// into `dir`.
    pub fn finish(mut self, dir: &Path, outputs: &[PathBuf]) -> Result<PathBuf> {
        self.finished = Some(timestamp());
        self.outputs = outputs
            .iter()
            .map(|p| {
                p.file_name()
                    .map(|f| f.to_string_lossy().into_owned())
                    .unwrap_or_default()
            })
            .collect();
        let path = dir.join(MANIFEST_FILE);
        write_json(&path, &self)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Human-oriented summary of the fitted parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub intercepts: Vec<Vec<f64>>,
    pub loadings: Vec<Vec<f64>>,
    pub correlation: Vec<Vec<f64>>,
    pub n_parameters: usize,
    pub steps: usize,
    pub converged: bool,
    pub final_elbo: Option<f64>,
}

impl Estimates {
    pub fn from_fit(result: &FitResult) -> Self {
        Self {
            intercepts: result.items.iter().map(|i| i.intercepts.clone()).collect(),
            loadings: result.loadings(),
            correlation: result.correlation.clone(),
            n_parameters: result.n_parameters,
            steps: result.steps,
            converged: result.converged,
            final_elbo: result.trace.last().copied(),
        }
    }
}

pub fn trace_csv(trace: &[f64], window: usize) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["window", "step", "mean_elbo"])?;
    for (i, v) in trace.iter().enumerate() {
        w.write_record([i.to_string(), ((i + 1) * window).to_string(), format!("{v:?}")])?;
    }
    w.flush()?;
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub const FIT_FILE: &str = "fit.json";
pub const ESTIMATES_FILE: &str = "estimates.json";
pub const TRACE_FILE: &str = "trace.csv";

/// Writes the full fit (loadable with [`load_fit`]), an estimates summary
/// and the ELBO trace into `dir`, creating it if needed.
pub fn save_results(result: &FitResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let fit = dir.join(FIT_FILE);
    write_json(&fit, result)?;
    let est = dir.join(ESTIMATES_FILE);
    write_json(&est, &Estimates::from_fit(result))?;
    let trace = dir.join(TRACE_FILE);
    write_atomic(&trace, &trace_csv(&result.trace, result.config.window)?)?;
    Ok(vec![fit, est, trace])
}

pub fn load_fit(path: &Path) -> Result<FitResult> {
    read_json(path)
}
