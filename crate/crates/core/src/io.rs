//! Matrix files, parameter documents and flat config files.
//!
//! Matrices are headerless CSV or a JSON array of arrays, picked by file
//! extension. Row numbers in format errors are zero-based, like matrix
//! indices.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{LogitsMatrix, Matrix};
use crate::sortnet::SortNetParams;

/// Version stamped into every JSON document this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Json,
}

impl MatrixFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") => Ok(Self::Csv),
            Some("json") => Ok(Self::Json),
            _ => Err(Error::Config(format!(
                "cannot infer matrix format of {} (expected .csv or .json)",
                path.display()
            ))),
        }
    }
}

pub fn parse_csv_matrix(text: &str) -> Result<Matrix<f64>> {
    let mut rows = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row_index = rows.len();
        let row = line
            .split(',')
            .map(|field| {
                let field = field.trim();
                field.parse::<f64>().map_err(|e| Error::Format {
                    row: row_index,
                    reason: format!("bad number {field:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

pub fn parse_json_matrix(text: &str) -> Result<Matrix<f64>> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(text)?;
    Matrix::from_rows(&rows)
}

/// Rust's float formatting is the shortest decimal that parses back to the
/// same value, so CSV output round-trips exactly.
pub fn matrix_to_csv(m: &Matrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let fields: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_to_json(m: &Matrix<f64>) -> Result<String> {
    Ok(serde_json::to_string(&m.to_rows())?)
}

pub fn load_matrix(path: &Path) -> Result<Matrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    match MatrixFormat::from_path(path)? {
        MatrixFormat::Csv => parse_csv_matrix(&text),
        MatrixFormat::Json => parse_json_matrix(&text),
    }
}

pub fn load_logits(path: &Path) -> Result<LogitsMatrix<f64>> {
    LogitsMatrix::new(load_matrix(path)?)
}

pub fn save_matrix(path: &Path, m: &Matrix<f64>) -> Result<()> {
    let text = match MatrixFormat::from_path(path)? {
        MatrixFormat::Csv => matrix_to_csv(m),
        MatrixFormat::Json => matrix_to_json(m)? + "\n",
    };
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamsDocument {
    schema_version: u32,
    kind: String,
    n: usize,
    n_units: usize,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
}

const PARAMS_KIND: &str = "sortnet_params";

/// Versioned JSON document for one parameter set.
pub fn params_document(p: &SortNetParams) -> serde_json::Value {
    serde_json::to_value(params_doc(p)).expect("plain data serializes")
}

pub fn params_to_json(p: &SortNetParams) -> Result<String> {
    Ok(serde_json::to_string_pretty(&params_doc(p))?)
}

fn params_doc(p: &SortNetParams) -> ParamsDocument {
    ParamsDocument {
        schema_version: SCHEMA_VERSION,
        kind: PARAMS_KIND.into(),
        n: p.n(),
        n_units: p.n_units(),
        w1: p.w1.to_rows(),
        b1: p.b1.as_slice().to_vec(),
        w2: p.w2.to_rows(),
        b2: p.b2.as_slice().to_vec(),
    }
}

pub fn params_from_json(text: &str) -> Result<SortNetParams> {
    let doc: ParamsDocument = serde_json::from_str(text)?;
    if doc.schema_version != SCHEMA_VERSION || doc.kind != PARAMS_KIND {
        return Err(Error::Config(format!(
            "expected {PARAMS_KIND} schema {SCHEMA_VERSION}, found {} schema {}",
            doc.kind, doc.schema_version
        )));
    }
    let p = SortNetParams {
        w1: Matrix::from_rows(&doc.w1)?,
        b1: Matrix::from_vec(1, doc.b1.len(), doc.b1)?,
        w2: Matrix::from_rows(&doc.w2)?,
        b2: Matrix::from_vec(1, doc.b2.len(), doc.b2)?,
    };
    p.validate()?;
    if p.n() != doc.n || p.n_units() != doc.n_units {
        return Err(Error::Config(format!(
            "declared shape ({}, {}) disagrees with weights ({}, {})",
            doc.n,
            doc.n_units,
            p.n(),
            p.n_units()
        )));
    }
    Ok(p)
}

/// Flat `key = value` config. `[section]` headers prefix later keys with
/// `section.`; `#` and `;` start comment lines.
pub fn parse_ini(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key = value, got {line:?}", k + 1)));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", k + 1)));
        }
        let key = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

/// Inverse of [`parse_ini`] for unsectioned maps, keys in sorted order.
pub fn write_ini(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
