//! Tabular risk datasets: schema, CSV loading, preprocessing and splits.

mod catalog;
mod preprocess;
mod split;

pub use catalog::{preset, preset_names};
pub use preprocess::{fit_preprocess, quantile_sorted, PreprocessState, RobustScale};
pub use split::{stratified_split, SplitSpec};

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub name: String,
    pub kind: FeatureKind,
    /// Ordered category labels. Empty for numeric features; for categorical
    /// features an empty list means "learn levels in first-appearance order".
    #[serde(default)]
    pub levels: Vec<String>,
    #[serde(default)]
    pub index: usize,
}

impl FeatureSchema {
    pub fn numeric(name: &str, index: usize) -> Self {
        FeatureSchema {
            name: name.to_string(),
            kind: FeatureKind::Numeric,
            levels: Vec::new(),
            index,
        }
    }

    pub fn categorical(name: &str, index: usize, levels: &[&str]) -> Self {
        FeatureSchema {
            name: name.to_string(),
            kind: FeatureKind::Categorical,
            levels: levels.iter().map(|s| s.to_string()).collect(),
            index,
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == FeatureKind::Categorical
    }
}

/// Checks index contiguity and level counts.
pub fn validate_schema(schema: &[FeatureSchema]) -> Result<()> {
    for (i, f) in schema.iter().enumerate() {
        if f.index != i {
            return Err(Error::Schema(format!(
                "feature {:?} has index {} but position {}",
                f.name, f.index, i
            )));
        }
        match f.kind {
            FeatureKind::Numeric if !f.levels.is_empty() => {
                return Err(Error::Schema(format!("numeric feature {:?} declares levels", f.name)))
            }
            FeatureKind::Categorical if f.levels.is_empty() => {
                return Err(Error::Schema(format!("categorical feature {:?} has no levels", f.name)))
            }
            _ => {}
        }
    }
    let mut seen = std::collections::HashSet::new();
    for f in schema {
        if !seen.insert(f.name.as_str()) {
            return Err(Error::Schema(format!("duplicate feature name {:?}", f.name)));
        }
    }
    Ok(())
}

/// How to read the binary label column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub column: String,
    /// When set, `y = 1` iff the cell equals this string; otherwise the cell
    /// must parse as 0 or 1.
    #[serde(default)]
    pub positive: Option<String>,
}

/// Everything needed to load one dataset from CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub features: Vec<FeatureSchema>,
    pub label: LabelSpec,
    /// Numeric sentinel values treated as missing (HELOC style -7/-8/-9).
    #[serde(default)]
    pub missing_sentinels: Vec<f64>,
    /// Columns with a larger missing fraction are dropped.
    #[serde(default = "default_drop_fraction")]
    pub drop_missing_fraction: f64,
}

fn default_drop_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub schema: Vec<FeatureSchema>,
    /// Encoded rows: raw numeric values, ordinal codes for categoricals.
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(name: &str, schema: Vec<FeatureSchema>, rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        validate_schema(&schema)?;
        if rows.len() != labels.len() {
            return Err(Error::Schema(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let ds = Dataset {
            name: name.to_string(),
            schema,
            rows,
            labels,
        };
        for (r, row) in ds.rows.iter().enumerate() {
            ds.check_row(row).map_err(|e| Error::Row {
                row: r,
                message: e.to_string(),
            })?;
        }
        Ok(ds)
    }

    pub fn dim(&self) -> usize {
        self.schema.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn prevalence(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().map(|&y| f64::from(y)).sum::<f64>() / self.labels.len() as f64
    }

    pub fn n_categorical(&self) -> usize {
        self.schema.iter().filter(|f| f.is_categorical()).count()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: row.len(),
            });
        }
        for (f, &v) in self.schema.iter().zip(row) {
            if !v.is_finite() {
                return Err(Error::NonFinite(f.name.clone()));
            }
            if f.is_categorical() && (v < 0.0 || v.fract() != 0.0 || v as usize >= f.levels.len()) {
                return Err(Error::UnknownCategory {
                    feature: f.name.clone(),
                    label: v.to_string(),
                });
            }
        }
        Ok(())
    }
}

pub fn load_csv(path: impl AsRef<Path>, spec: &DatasetSpec) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_reader(file, spec)
}

/// Parse a CSV stream with a header row against `spec`.
pub fn load_csv_reader<R: Read>(reader: R, spec: &DatasetSpec) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let mut cols = Vec::with_capacity(spec.features.len());
    for f in &spec.features {
        let j = *position
            .get(f.name.as_str())
            .ok_or_else(|| Error::Schema(format!("missing column {:?}", f.name)))?;
        cols.push(j);
    }
    let label_col = *position
        .get(spec.label.column.as_str())
        .ok_or_else(|| Error::Schema(format!("missing label column {:?}", spec.label.column)))?;

    let mut schema: Vec<FeatureSchema> = spec
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| FeatureSchema { index: i, ..f.clone() })
        .collect();
    let learn_levels: Vec<bool> = schema.iter().map(|f| f.is_categorical() && f.levels.is_empty()).collect();

    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut row = Vec::with_capacity(schema.len());
        for (k, f) in schema.iter_mut().enumerate() {
            let cell = rec.get(cols[k]).unwrap_or("");
            let value = match f.kind {
                FeatureKind::Numeric => {
                    let v: f64 = cell.parse().map_err(|_| Error::Row {
                        row: r,
                        message: format!("unparseable numeric cell {:?} in column {:?}", cell, f.name),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Row {
                            row: r,
                            message: format!("non-finite value in column {:?}", f.name),
                        });
                    }
                    if spec.missing_sentinels.contains(&v) {
                        None
                    } else {
                        Some(v)
                    }
                }
                FeatureKind::Categorical => match f.levels.iter().position(|l| l == cell) {
                    Some(code) => Some(code as f64),
                    None if learn_levels[k] => {
                        f.levels.push(cell.to_string());
                        Some((f.levels.len() - 1) as f64)
                    }
                    None => {
                        return Err(Error::UnknownCategory {
                            feature: f.name.clone(),
                            label: cell.to_string(),
                        })
                    }
                },
            };
            row.push(value);
        }
        let cell = rec.get(label_col).unwrap_or("");
        let y = match &spec.label.positive {
            Some(p) => u8::from(cell == p),
            None => match cell {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::Row {
                        row: r,
                        message: format!("label {:?} is not 0/1", other),
                    })
                }
            },
        };
        rows.push(row);
        labels.push(y);
    }
    let (schema, rows, labels) = handle_missing(schema, rows, labels, spec.drop_missing_fraction);
    Dataset::new(&spec.name, schema, rows, labels)
}

/// Drop rows with every numeric cell missing, drop columns above the missing
/// threshold, then median-impute what is left.
fn handle_missing(
    schema: Vec<FeatureSchema>,
    rows: Vec<Vec<Option<f64>>>,
    labels: Vec<u8>,
    drop_fraction: f64,
) -> (Vec<FeatureSchema>, Vec<Vec<f64>>, Vec<u8>) {
    let any_missing = rows.iter().any(|r| r.iter().any(|c| c.is_none()));
    if !any_missing {
        let rows = rows.into_iter().map(|r| r.into_iter().map(|c| c.unwrap_or(0.0)).collect()).collect();
        return (schema, rows, labels);
    }
    let numeric: Vec<usize> = (0..schema.len()).filter(|&j| !schema[j].is_categorical()).collect();
    let (rows, labels): (Vec<_>, Vec<_>) = rows
        .into_iter()
        .zip(labels)
        .filter(|(r, _)| numeric.is_empty() || numeric.iter().any(|&j| r[j].is_some()))
        .unzip();
    let n = rows.len().max(1) as f64;
    let keep: Vec<usize> = (0..schema.len())
        .filter(|&j| {
            let missing = rows.iter().filter(|r| r[j].is_none()).count() as f64;
            missing / n <= drop_fraction
        })
        .collect();
    let medians: Vec<f64> = keep
        .iter()
        .map(|&j| {
            let mut v: Vec<f64> = rows.iter().filter_map(|r| r[j]).collect();
            v.sort_by(|a, b| a.total_cmp(b));
            if v.is_empty() {
                0.0
            } else {
                preprocess::quantile_sorted(&v, 0.5)
            }
        })
        .collect();
    let schema = keep
        .iter()
        .enumerate()
        .map(|(i, &j)| FeatureSchema {
            index: i,
            ..schema[j].clone()
        })
        .collect();
    let rows = rows
        .into_iter()
        .map(|r| keep.iter().zip(&medians).map(|(&j, &m)| r[j].unwrap_or(m)).collect())
        .collect();
    (schema, rows, labels)
}
