//! File formats: response CSVs, model-spec JSON and result persistence.

mod responses;
mod results;
mod spec;

use std::io::Write;
use std::path::Path;

pub use responses::{load_responses, parse_responses, responses_to_csv, ResponseOptions};
pub use results::{
    load_fit, read_json, save_results, timestamp, trace_csv, write_json, Estimates, RunManifest, ESTIMATES_FILE,
    FIT_FILE, MANIFEST_FILE, TRACE_FILE,
};
pub use spec::{load_spec, parse_spec, LoadedSpec};

use crate::error::Result;

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, creating parent directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
