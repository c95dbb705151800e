//! CSV dataset loading with optional standardisation.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighbours::Dataset;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetColumn {
    Last,
    Name(String),
}

/// Per-column location and scale, kept so predictions can be mapped back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
    /// Columns with zero spread, left unscaled.
    pub constant_columns: Vec<String>,
    pub standardised: bool,
}

impl Scaler {
    pub fn destandardise_target(&self, y: f64) -> f64 {
        y * self.target_scale + self.target_mean
    }

    pub fn destandardise_features(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.feature_means.iter().zip(&self.feature_scales))
            .map(|(v, (mu, s))| v * s + mu)
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn ingest_csv(
    path: &Path,
    target: &TargetColumn,
    standardise: bool,
) -> Result<(Dataset, Scaler)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, target, standardise)
}

/// Parses a headed, all-numeric CSV. Rows and columns in errors are 1-based
/// over data rows and fields.
pub fn ingest_reader<R: Read>(
    reader: R,
    target: &TargetColumn,
    standardise: bool,
) -> Result<(Dataset, Scaler)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.len() < 2 {
        return Err(Error::Config(
            "need at least one feature and one target column".into(),
        ));
    }
    let target_idx = match target {
        TargetColumn::Last => headers.len() - 1,
        TargetColumn::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("no column named `{name}`")))?,
    };
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                row: row + 1,
                column: rec.len().min(headers.len()) + 1,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: row + 1,
                column: col + 1,
                message: format!("`{field}` in column `{}` is not a number", headers[col]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: row + 1,
                    column: col + 1,
                    message: format!("non-finite value in column `{}`", headers[col]),
                });
            }
            columns[col].push(v);
        }
    }
    let n = columns[0].len();
    if n == 0 {
        return Err(Error::EmptyInput("CSV has no data rows"));
    }
    let mut constant = Vec::new();
    let mut stats = Vec::with_capacity(headers.len());
    for (name, col) in headers.iter().zip(&columns) {
        let (mean, scale) = if standardise {
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            if var > 0.0 {
                (mean, var.sqrt())
            } else {
                constant.push(name.clone());
                (0.0, 1.0)
            }
        } else {
            (0.0, 1.0)
        };
        stats.push((mean, scale));
    }
    let feature_idx: Vec<usize> = (0..headers.len()).filter(|&c| c != target_idx).collect();
    let d = feature_idx.len();
    let mut inputs = Vec::with_capacity(n * d);
    for r in 0..n {
        for &c in &feature_idx {
            let (mu, s) = stats[c];
            inputs.push((columns[c][r] - mu) / s);
        }
    }
    let (tmu, ts) = stats[target_idx];
    let targets = columns[target_idx].iter().map(|v| (v - tmu) / ts).collect();
    let scaler = Scaler {
        feature_names: feature_idx.iter().map(|&c| headers[c].clone()).collect(),
        target_name: headers[target_idx].clone(),
        feature_means: feature_idx.iter().map(|&c| stats[c].0).collect(),
        feature_scales: feature_idx.iter().map(|&c| stats[c].1).collect(),
        target_mean: tmu,
        target_scale: ts,
        constant_columns: constant,
        standardised: standardise,
    };
    Ok((Dataset::new(inputs, targets, d)?, scaler))
}
