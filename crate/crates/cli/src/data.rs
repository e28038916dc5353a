//! CSV ingestion: numeric tables, response selection and the intercept.

use std::path::Path;

use mmqr::{Dataset, Error as CoreError};
use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// `sha256:<hex>` of the raw file bytes.
    pub digest: String,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| CliError::MissingColumn(name.to_string()))
    }

    pub fn column(&self, j: usize) -> Array1<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }
}

pub fn digest(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Header plus strictly numeric body; no missing cells.
pub fn read_table(path: &Path) -> Result<Table> {
    let bytes = read_bytes(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(&bytes[..]);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Csv(e.to_string()))?
        .iter()
        .map(|h| h.trim_matches('"').to_string())
        .collect();
    if header.is_empty() {
        return Err(CliError::Csv("empty header".into()));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .zip(&header)
            .map(|(cell, name)| {
                let message = if cell.is_empty() { "missing value".to_string() } else { format!("`{cell}` is not a number") };
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(CliError::Cell { line, column: name.clone(), message }),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Csv("no data rows".into()));
    }
    Ok(Table { header, rows, digest: digest(&bytes) })
}

/// A response column and the design built from the remaining columns.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub data: Dataset,
    /// Design column names, `intercept` first.
    pub terms: Vec<String>,
    pub digest: String,
}

pub fn dataset_from(table: &Table, response: &str, columns: &[usize]) -> Result<Loaded> {
    let yj = table.column_index(response)?;
    let n = table.rows.len();
    let y = table.column(yj);
    let mut x = Array2::<f64>::ones((n, columns.len() + 1));
    for (k, &j) in columns.iter().enumerate() {
        x.column_mut(k + 1).assign(&table.column(j));
    }
    let mut terms = vec!["intercept".to_string()];
    terms.extend(columns.iter().map(|&j| table.header[j].clone()));
    let data = Dataset::new(y, x).map_err(|e| match e {
        CoreError::RankDeficient { column } => CliError::Rank {
            column: terms[column].clone(),
            earlier: terms[..column].iter().map(|t| format!("`{t}`")).collect::<Vec<_>>().join(", "),
        },
        other => other.into(),
    })?;
    Ok(Loaded { data, terms, digest: table.digest.clone() })
}

/// Response named `response`; every other column becomes a covariate after
/// a prepended intercept.
pub fn load_csv(path: &Path, response: &str) -> Result<Loaded> {
    let table = read_table(path)?;
    let yj = table.column_index(response)?;
    let columns: Vec<usize> = (0..table.header.len()).filter(|&j| j != yj).collect();
    dataset_from(&table, response, &columns)
}
