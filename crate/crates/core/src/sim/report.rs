use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One value in the long-format CSV export. Cell keys that do not apply to
/// a study are left empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub study: String,
    pub n: Option<usize>,
    pub iw_samples: Option<usize>,
    pub shift: Option<f64>,
    pub model: Option<String>,
    pub classifier: Option<String>,
    pub delta: Option<f64>,
    pub parameter: Option<String>,
    pub metric: String,
    pub value: f64,
}

pub fn write_long_csv(rows: &[LongRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub(crate) fn require_replications(replications: usize, grid: &[usize]) -> Result<()> {
    if replications == 0 {
        return Err(crate::error::IfaError::InvalidArgument(
            "at least one replication is required".into(),
        ));
    }
    if grid.is_empty() {
        return Err(crate::error::IfaError::InvalidArgument(
            "the sample-size grid is empty".into(),
        ));
    }
    Ok(())
}
