//! JSON model-spec documents.
//!
//! ```json
//! {
//!   "categories": 5,               // or one count per item
//!   "items": 6,                    // needed when "categories" is a number
//!   "factors": 2,
//!   "loadings": [["free", 0], ["free", 0], ["free", "=d"], ...],
//!   "correlation": "free"          // or "orthogonal", or an object
//! }
//! ```
//!
//! A loading cell is `"free"` (or `"*"`), a number (a fixed loading) or
//! `"=name"` (equal to every other cell with that name). Instead of
//! `"loadings"`, `"simple_structure": [0, 0, 0, 1, 1, 1]` assigns each item
//! to one factor, and `"constraints"` with `"free_loadings"` gives the
//! linear form directly. The correlation object accepts
//! `"orthogonal_factors": [p, ...]` and `"fixed_angles": [[row, col, angle], ...]`.

use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use crate::error::{IfaError, Result};
use crate::grm::{CorrelationStructure, LoadingConstraint, LoadingPattern, ModelSpec};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDocument {
    categories: Value,
    #[serde(default)]
    items: Option<usize>,
    factors: usize,
    #[serde(default)]
    loadings: Option<Vec<Vec<Value>>>,
    #[serde(default)]
    simple_structure: Option<Vec<usize>>,
    #[serde(default)]
    constraints: Option<Vec<LoadingConstraint>>,
    #[serde(default)]
    free_loadings: Option<usize>,
    #[serde(default)]
    correlation: Option<Value>,
}

/// A compiled spec with identification warnings.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedSpec {
    pub spec: ModelSpec,
    pub warnings: Vec<String>,
}

struct Source<'a> {
    name: &'a str,
    text: &'a str,
}

impl Source<'_> {
    fn error(&self, line: usize, message: impl Into<String>) -> IfaError {
        IfaError::Parse {
            path: self.name.to_string(),
            line,
            message: message.into(),
        }
    }

    /// Line of the first occurrence of `"key"`, or 1.
    fn key_line(&self, key: &str) -> usize {
        let needle = format!("\"{key}\"");
        self.text.find(&needle).map(|i| self.line_at(i)).unwrap_or(1)
    }

    fn line_at(&self, byte: usize) -> usize {
        self.text[..byte].bytes().filter(|&b| b == b'\n').count() + 1
    }

    /// Line on which row `row` of the array under `key` opens.
    fn row_line(&self, key: &str, row: usize) -> usize {
        let needle = format!("\"{key}\"");
        let Some(start) = self.text.find(&needle) else {
            return 1;
        };
        let mut depth = 0usize;
        let mut seen = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (i, b) in self.text.bytes().enumerate().skip(start + needle.len()) {
            if in_string {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'[' => {
                    depth += 1;
                    if depth == 2 {
                        if seen == row {
                            return self.line_at(i);
                        }
                        seen += 1;
                    }
                }
                b']' => {
                    if depth <= 1 {
                        break;
                    }
                    depth -= 1;
                }
                _ => {}
            }
        }
        self.key_line(key)
    }
}

fn parse_cell(v: &Value) -> std::result::Result<LoadingPattern, String> {
    match v {
        Value::Number(n) => n
            .as_f64()
            .filter(|x| x.is_finite())
            .map(LoadingPattern::Fixed)
            .ok_or_else(|| format!("loading {n} is not a finite number")),
        Value::String(s) => {
            let s = s.trim();
            if s == "free" || s == "*" {
                Ok(LoadingPattern::Free)
            } else if let Some(name) = s.strip_prefix('=') {
                if name.is_empty() {
                    Err("tie group '=' needs a name".into())
                } else {
                    Ok(LoadingPattern::Tied(name.to_string()))
                }
            } else if let Ok(x) = s.parse::<f64>() {
                if x.is_finite() {
                    Ok(LoadingPattern::Fixed(x))
                } else {
                    Err(format!("loading '{s}' is not finite"))
                }
            } else {
                Err(format!(
                    "unknown loading cell '{s}' (expected \"free\", a number or \"=group\")"
                ))
            }
        }
        other => Err(format!("unexpected loading cell {other}")),
    }
}

fn parse_correlation(src: &Source, v: Option<&Value>, factors: usize) -> Result<CorrelationStructure> {
    let line = src.key_line("correlation");
    let Some(v) = v else {
        return Ok(CorrelationStructure::free(factors));
    };
    match v {
        Value::String(s) if s == "free" => Ok(CorrelationStructure::free(factors)),
        Value::String(s) if s == "orthogonal" => Ok(CorrelationStructure::orthogonal(factors)),
        Value::Object(map) => {
            let mut c = CorrelationStructure::free(factors);
            for (key, val) in map {
                match key.as_str() {
                    "orthogonal_factors" => {
                        let list = val
                            .as_array()
                            .ok_or_else(|| src.error(line, "orthogonal_factors must be an array"))?;
                        for p in list {
                            let p = p.as_u64().map(|p| p as usize).filter(|&p| p < factors).ok_or_else(|| {
                                src.error(line, format!("orthogonal factor {p} is not a factor index"))
                            })?;
                            c.make_orthogonal(factors, p);
                        }
                    }
                    "fixed_angles" => {
                        let list = val
                            .as_array()
                            .ok_or_else(|| src.error(line, "fixed_angles must be an array"))?;
                        for entry in list {
                            let triple = entry.as_array().filter(|a| a.len() == 3);
                            let parsed = triple
                                .and_then(|a| Some((a[0].as_u64()? as usize, a[1].as_u64()? as usize, a[2].as_f64()?)));
                            let (row, col, angle) = parsed.ok_or_else(|| {
                                src.error(line, format!("fixed angle {entry} must be [row, col, angle]"))
                            })?;
                            if !(col < row && row < factors) {
                                return Err(
                                    src.error(line, format!("angle ({row}, {col}) is not strictly lower triangular"))
                                );
                            }
                            if !(angle > 0.0 && angle <= std::f64::consts::PI) {
                                return Err(src.error(line, format!("angle {angle} outside (0, pi]")));
                            }
                            c.fixed[row * (row - 1) / 2 + col] = Some(angle);
                        }
                    }
                    other => return Err(src.error(line, format!("unknown correlation option '{other}'"))),
                }
            }
            Ok(c)
        }
        other => Err(src.error(
            line,
            format!("correlation must be \"free\", \"orthogonal\" or an object, not {other}"),
        )),
    }
}

/// Compiles a spec document. `source` names the document in messages.
pub fn parse_spec(text: &str, source: &str) -> Result<LoadedSpec> {
    let src = Source { name: source, text };
    let doc: SpecDocument = serde_json::from_str(text).map_err(|e| src.error(e.line().max(1), e.to_string()))?;
    let categories: Vec<usize> = match &doc.categories {
        Value::Number(n) => {
            let k = n
                .as_u64()
                .ok_or_else(|| src.error(src.key_line("categories"), "categories must be a positive integer"))?;
            let items = doc.items.ok_or_else(|| {
                src.error(
                    src.key_line("categories"),
                    "\"items\" is required when \"categories\" is a single number",
                )
            })?;
            vec![k as usize; items]
        }
        Value::Array(list) => {
            let ks: Option<Vec<usize>> = list.iter().map(|v| v.as_u64().map(|k| k as usize)).collect();
            let ks = ks.ok_or_else(|| src.error(src.key_line("categories"), "categories must be integers"))?;
            if doc.items.is_some_and(|n| n != ks.len()) {
                return Err(src.error(
                    src.key_line("items"),
                    "\"items\" disagrees with the length of \"categories\"",
                ));
            }
            ks
        }
        _ => return Err(src.error(src.key_line("categories"), "categories must be a number or an array")),
    };
    let correlation = parse_correlation(&src, doc.correlation.as_ref(), doc.factors)?;
    let given = [
        doc.loadings.is_some(),
        doc.simple_structure.is_some(),
        doc.constraints.is_some(),
    ];
    if given.iter().filter(|&&g| g).count() > 1 {
        return Err(src.error(
            1,
            "give only one of \"loadings\", \"simple_structure\" and \"constraints\"",
        ));
    }
    let spec = if let Some(rows) = &doc.loadings {
        if rows.len() != categories.len() {
            return Err(src.error(
                src.key_line("loadings"),
                format!("{} loading rows for {} items", rows.len(), categories.len()),
            ));
        }
        let mut pattern = Vec::with_capacity(rows.len());
        for (j, row) in rows.iter().enumerate() {
            let line = src.row_line("loadings", j);
            if row.len() != doc.factors {
                return Err(src.error(
                    line,
                    format!("item {j}: {} loading cells, expected {}", row.len(), doc.factors),
                ));
            }
            let cells: std::result::Result<Vec<_>, _> = row.iter().map(parse_cell).collect();
            pattern.push(cells.map_err(|m| src.error(line, format!("item {j}: {m}")))?);
        }
        ModelSpec::from_pattern(categories, doc.factors, &pattern, correlation)
    } else if let Some(assign) = &doc.simple_structure {
        let line = src.key_line("simple_structure");
        if let Some(bad) = assign.iter().find(|&&f| f >= doc.factors) {
            return Err(src.error(line, format!("factor {bad} out of range for {} factors", doc.factors)));
        }
        ModelSpec::simple_structure(categories, assign, doc.factors).and_then(|mut s| {
            s.correlation = correlation;
            s.validate().map(|_| s)
        })
    } else if let Some(constraints) = doc.constraints {
        let free = doc.free_loadings.ok_or_else(|| {
            src.error(
                src.key_line("constraints"),
                "\"free_loadings\" is required with \"constraints\"",
            )
        })?;
        ModelSpec::new(categories, doc.factors, free, constraints, correlation)
    } else if doc.factors == 0 {
        ModelSpec::zero_factor(categories)
    } else {
        return Err(src.error(
            1,
            "one of \"loadings\", \"simple_structure\" or \"constraints\" is required",
        ));
    }
    .map_err(|e| match e {
        IfaError::Parse { .. } => e,
        other => src.error(1, other.to_string()),
    })?;
    let warnings = spec.warnings();
    Ok(LoadedSpec { spec, warnings })
}

pub fn load_spec(path: &Path) -> Result<LoadedSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_spec(&text, &path.display().to_string())
}
