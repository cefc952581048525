use std::path::Path;

use crate::error::{IfaError, Result};
use crate::grm::ResponseMatrix;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResponseOptions {
    /// Codes in the file run `1..=K`; they are shifted to `0..K`.
    pub one_based: bool,
    /// Category counts to validate against. Without them each item gets
    /// `max(2, largest code + 1)` categories.
    pub categories: Option<Vec<usize>>,
}

fn parse_error(path: &str, line: usize, message: String) -> IfaError {
    IfaError::Parse {
        path: path.to_string(),
        line,
        message,
    }
}

/// Parses a comma-separated matrix of integer codes. A first row with any
/// non-integer cell is taken as a header.
pub fn parse_responses(text: &str, source: &str, opts: &ResponseOptions) -> Result<ResponseMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut codes: Vec<u16> = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(i + 1);
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let parsed: Vec<std::result::Result<i64, _>> = record.iter().map(|c| c.parse::<i64>()).collect();
        if rows == 0 && width.is_none() && parsed.iter().any(|c| c.is_err()) {
            // header
            width = Some(record.len());
            continue;
        }
        match width {
            Some(w) if w != record.len() => {
                return Err(parse_error(
                    source,
                    line,
                    format!("row has {} cells, expected {w}", record.len()),
                ))
            }
            _ => width = Some(record.len()),
        }
        for (j, (cell, raw)) in parsed.into_iter().zip(record.iter()).enumerate() {
            let v =
                cell.map_err(|_| parse_error(source, line, format!("column {}: '{raw}' is not an integer", j + 1)))?;
            let v = if opts.one_based { v - 1 } else { v };
            let limit = opts.categories.as_ref().and_then(|k| k.get(j).copied());
            if v < 0 || v > u16::MAX as i64 || limit.is_some_and(|k| v >= k as i64) {
                return Err(IfaError::CategoryOutOfRange {
                    row: rows,
                    item: j,
                    code: if opts.one_based { v + 1 } else { v },
                    categories: limit.unwrap_or(0),
                });
            }
            codes.push(v as u16);
        }
        rows += 1;
    }
    let width = match width {
        Some(w) if rows > 0 => w,
        _ => return Err(IfaError::EmptyData(format!("{source}: no response rows"))),
    };
    let categories = match &opts.categories {
        Some(k) => {
            if k.len() != width {
                return Err(IfaError::Dimension(format!(
                    "{source}: {width} columns but the model has {} items",
                    k.len()
                )));
            }
            k.clone()
        }
        None => (0..width)
            .map(|j| {
                let max = codes.iter().skip(j).step_by(width).max().copied().unwrap_or(0) as usize;
                (max + 1).max(2)
            })
            .collect(),
    };
    ResponseMatrix::new(categories, rows, codes)
}

pub fn load_responses(path: &Path, opts: &ResponseOptions) -> Result<ResponseMatrix> {
    let text = std::fs::read_to_string(path)?;
    parse_responses(&text, &path.display().to_string(), opts)
}

/// Header-less CSV of codes, one row per observation.
pub fn responses_to_csv(data: &ResponseMatrix) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in data.rows() {
        w.write_record(row.iter().map(|c| c.to_string()))?;
    }
    w.flush()?;
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}
