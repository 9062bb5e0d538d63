//! CSV ingestion and feature standardization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::costs::{Sample, TaskKind};
use crate::error::{Error, Result};

/// Column layout of a tabular dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    pub features: Vec<String>,
    pub label: String,
    pub kind: TaskKind,
}

impl DatasetSchema {
    /// Column names of the scikit-learn export of California Housing.
    pub fn california_housing() -> Self {
        Self {
            features: ["MedInc", "HouseAge", "AveRooms", "AveBedrms", "Population", "AveOccup", "Latitude", "Longitude"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            label: "MedHouseVal".into(),
            kind: TaskKind::Regression,
        }
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f == name)
    }
}

/// Raw rows in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: DatasetSchema,
    pub x: Vec<Vec<f64>>,
    pub label: Vec<f64>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn samples(&self) -> Result<Vec<Sample>> {
        self.x
            .iter()
            .zip(&self.label)
            .map(|(x, &l)| match self.schema.kind {
                TaskKind::Regression => Ok(Sample::regression(x.clone(), l)),
                TaskKind::Classification => {
                    if l < 0.0 || l.fract() != 0.0 {
                        return Err(Error::Schema(format!("class label {l} is not a non-negative integer")));
                    }
                    Ok(Sample::classification(x.clone(), l as usize))
                }
            })
            .collect()
    }
}

pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::dataset(path, format!("cannot open: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::dataset(path, format!("cannot read header: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(Error::dataset(path, "empty file"));
    }
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::dataset(path, format!("missing column '{name}'")))
    };
    let cols: Vec<usize> = schema.features.iter().map(|f| find(f)).collect::<Result<_>>()?;
    let label_col = find(&schema.label)?;
    let mut x = Vec::new();
    let mut label = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::dataset(path, format!("row {}: {e}", row + 2)))?;
        let cell = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("").trim();
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::dataset(path, format!("row {}, column '{}': non-numeric cell '{raw}'", row + 2, &headers[c]))
            })
        };
        x.push(cols.iter().map(|&c| cell(c)).collect::<Result<Vec<_>>>()?);
        label.push(cell(label_col)?);
    }
    if x.is_empty() {
        return Err(Error::dataset(path, "no data rows"));
    }
    Ok(Table {
        schema: schema.clone(),
        x,
        label,
    })
}

/// Per-feature mean and variance fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>], names: &[String]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::Schema("need at least two rows to standardize".into()));
        }
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        if let Some(i) = var.iter().position(|v| !(*v > 0.0)) {
            let name = names.get(i).map_or_else(|| format!("#{i}"), |s| s.clone());
            return Err(Error::Schema(format!("feature '{name}' is constant on the training split")));
        }
        Ok(Self { mean, var })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((v, m), s)| (v - m) / s.sqrt())
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((v, m), s)| v * s.sqrt() + m)
            .collect()
    }

    /// Standardized value of raw value `v` of feature `i`.
    pub fn apply_one(&self, i: usize, v: f64) -> f64 {
        (v - self.mean[i]) / self.var[i].sqrt()
    }
}

/// `(train, test)` index split of `0..n`, test share `test_fraction`.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    crate::trainer::split_indices(n, test_fraction, seed)
}
