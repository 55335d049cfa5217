//! Robust (median / IQR) scaling with tanh saturation.

use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureKind, FeatureSchema};
use crate::{Error, Result};

pub(crate) const IQR_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustScale {
    pub median: f64,
    /// Stored as `max(IQR, 1e-9)`.
    pub iqr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessState {
    pub schema: Vec<FeatureSchema>,
    /// One entry per feature; `None` for categorical features.
    pub scales: Vec<Option<RobustScale>>,
    /// Frozen ordinal maps (level labels by code); empty for numeric features.
    pub ordinal: Vec<Vec<String>>,
    /// Scaled value is `tanh((v - median) / (iqr * saturation))`.
    pub saturation: f64,
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn fit_preprocess(train: &Dataset) -> Result<PreprocessState> {
    if train.is_empty() {
        return Err(Error::Degenerate("cannot fit preprocessing on an empty split".into()));
    }
    let mut scales = Vec::with_capacity(train.dim());
    let mut ordinal = Vec::with_capacity(train.dim());
    for f in &train.schema {
        match f.kind {
            FeatureKind::Numeric => {
                let mut col = train.column(f.index);
                col.sort_by(|a, b| a.total_cmp(b));
                let median = quantile_sorted(&col, 0.5);
                let iqr = quantile_sorted(&col, 0.75) - quantile_sorted(&col, 0.25);
                if iqr < IQR_FLOOR {
                    log::warn!("feature {:?} has zero IQR; flooring to {IQR_FLOOR:e}", f.name);
                }
                scales.push(Some(RobustScale {
                    median,
                    iqr: iqr.max(IQR_FLOOR),
                }));
                ordinal.push(Vec::new());
            }
            FeatureKind::Categorical => {
                scales.push(None);
                ordinal.push(f.levels.clone());
            }
        }
    }
    Ok(PreprocessState {
        schema: train.schema.clone(),
        scales,
        ordinal,
        saturation: 1.0,
    })
}

impl PreprocessState {
    pub fn dim(&self) -> usize {
        self.schema.len()
    }

    /// Map an encoded raw instance into model space.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                if !v.is_finite() {
                    return Err(Error::NonFinite(self.schema[j].name.clone()));
                }
                match self.scales[j] {
                    Some(s) => Ok(((v - s.median) / (s.iqr * self.saturation)).tanh()),
                    None => {
                        if v < 0.0 || v.fract() != 0.0 || v as usize >= self.ordinal[j].len() {
                            Err(Error::UnknownCategory {
                                feature: self.schema[j].name.clone(),
                                label: v.to_string(),
                            })
                        } else {
                            Ok(v)
                        }
                    }
                }
            })
            .collect()
    }

    /// Map a record of textual cells (numeric literals or category labels).
    pub fn transform_record(&self, cells: &[&str]) -> Result<Vec<f64>> {
        let raw = self.encode_record(cells)?;
        self.transform(&raw)
    }

    pub fn encode_record(&self, cells: &[&str]) -> Result<Vec<f64>> {
        if cells.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: cells.len(),
            });
        }
        cells
            .iter()
            .enumerate()
            .map(|(j, cell)| match self.scales[j] {
                Some(_) => cell
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidParameter(format!("{:?} is not numeric", cell))),
                None => self.ordinal[j]
                    .iter()
                    .position(|l| l == cell)
                    .map(|c| c as f64)
                    .ok_or_else(|| Error::UnknownCategory {
                        feature: self.schema[j].name.clone(),
                        label: cell.to_string(),
                    }),
            })
            .collect()
    }

    /// Inverse of the numeric scaling, used to display model-space values.
    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(j, &u)| match self.scales[j] {
                Some(s) => {
                    let u = u.clamp(-1.0 + 1e-12, 1.0 - 1e-12);
                    s.median + u.atanh() * s.iqr * self.saturation
                }
                None => u,
            })
            .collect()
    }

    pub fn transform_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        let rows = ds.rows.iter().map(|r| self.transform(r)).collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            name: ds.name.clone(),
            schema: ds.schema.clone(),
            rows,
            labels: ds.labels.clone(),
        })
    }

    pub fn categorical_mask(&self) -> Vec<bool> {
        self.scales.iter().map(|s| s.is_none()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureSchema;
    use proptest::prelude::*;

    fn numeric_ds(col: &[f64]) -> Dataset {
        Dataset::new(
            "t",
            vec![FeatureSchema::numeric("a", 0)],
            col.iter().map(|&v| vec![v]).collect(),
            vec![0; col.len()],
        )
        .unwrap()
    }

    #[test]
    fn median_and_iqr_of_one_to_five() {
        let st = fit_preprocess(&numeric_ds(&[1.0, 2.0, 3.0, 4.0, 5.0])).unwrap();
        let s = st.scales[0].unwrap();
        assert_eq!(s.median, 3.0);
        assert_eq!(s.iqr, 2.0);
    }

    #[test]
    fn constant_feature_iqr_floored() {
        let st = fit_preprocess(&numeric_ds(&[7.0, 7.0, 7.0])).unwrap();
        let s = st.scales[0].unwrap();
        assert_eq!(s.median, 7.0);
        assert_eq!(s.iqr, 1e-9);
    }

    #[test]
    fn categorical_levels_become_identity_map() {
        let ds = Dataset::new(
            "t",
            vec![FeatureSchema::categorical("c", 0, &["A", "B", "C"])],
            vec![vec![0.0], vec![2.0]],
            vec![0, 1],
        )
        .unwrap();
        let st = fit_preprocess(&ds).unwrap();
        assert_eq!(st.ordinal[0], vec!["A", "B", "C"]);
        assert_eq!(st.transform_record(&["B"]).unwrap(), vec![1.0]);
        assert!(matches!(
            st.transform_record(&["D"]),
            Err(Error::UnknownCategory { .. })
        ));
    }

    #[test]
    fn centering_and_unit_iqr() {
        let st = fit_preprocess(&numeric_ds(&[1.0, 2.0, 3.0, 4.0, 5.0])).unwrap();
        assert_eq!(st.transform(&[3.0]).unwrap(), vec![0.0]);
        let v = st.transform(&[5.0]).unwrap()[0];
        assert!((v - 1f64.tanh()).abs() < 1e-15);
        assert!((v - 0.7616).abs() < 1e-4);
    }

    #[test]
    fn refit_on_transformed_keeps_ordinal_maps() {
        let ds = Dataset::new(
            "t",
            vec![FeatureSchema::numeric("a", 0), FeatureSchema::categorical("c", 1, &["x", "y"])],
            vec![vec![1.0, 0.0], vec![5.0, 1.0], vec![3.0, 1.0]],
            vec![0, 1, 1],
        )
        .unwrap();
        let st = fit_preprocess(&ds).unwrap();
        let st2 = fit_preprocess(&st.transform_dataset(&ds).unwrap()).unwrap();
        assert_eq!(st.ordinal, st2.ordinal);
    }

    proptest! {
        #[test]
        fn output_in_open_unit_interval(v in -1e6f64..1e6) {
            let st = fit_preprocess(&numeric_ds(&[1.0, 2.0, 3.0, 4.0, 5.0])).unwrap();
            let z = st.transform(&[v]).unwrap()[0];
            prop_assert!(z > -1.0 && z < 1.0 || (z.abs() == 1.0 && (v - 3.0).abs() > 30.0));
            prop_assert_eq!(z, st.transform(&[v]).unwrap()[0]);
        }
    }
}
