//! Design matrices for the outcome models.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::independent_columns;
use crate::models::predictive_entropy;
use crate::review::{Arm, Clarity, MlKnowledge, ReviewRecord};
use crate::{Error, Result};

pub const INTERCEPT: &str = "(intercept)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accuracy,
    Confidence,
    Clarity,
    Time,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Accuracy => "accuracy",
            Outcome::Confidence => "confidence",
            Outcome::Clarity => "clarity",
            Outcome::Time => "time",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignSpec {
    /// Fixed analyst-identity dummies in place of random effects.
    pub analyst_dummies: bool,
    /// Reference dataset; defaults to the first name in sorted order.
    pub dataset_reference: Option<String>,
    /// Include arm columns.
    pub arms: bool,
    /// Include the control set (model, dataset, difficulty, exposure, profile).
    pub controls: bool,
}

impl Default for DesignSpec {
    fn default() -> Self {
        DesignSpec {
            analyst_dummies: true,
            dataset_reference: None,
            arms: true,
            controls: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub outcome: Outcome,
    pub response: Vec<f64>,
    pub columns: Vec<String>,
    pub x: DMatrix<f64>,
    /// Columns removed as constant or aliased, in build order.
    pub dropped: Vec<String>,
    /// Indices into `logs` of the rows used.
    pub rows: Vec<usize>,
    pub has_intercept: bool,
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

pub fn arm_column(arm: Arm) -> String {
    format!("arm[{arm}]")
}

/// Per-record `log(1 + k)` where `k` is the 1-based position of the record
/// in its analyst's history ordered by serve time.
pub fn exposure(logs: &[ReviewRecord]) -> Vec<f64> {
    let mut by_analyst: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in logs.iter().enumerate() {
        by_analyst.entry(&r.analyst_id).or_default().push(i);
    }
    let mut out = vec![0.0; logs.len()];
    for idx in by_analyst.values_mut() {
        idx.sort_by_key(|&i| (logs[i].served_at, logs[i].record_index));
        for (k, &i) in idx.iter().enumerate() {
            out[i] = ((k + 1) as f64).ln_1p();
        }
    }
    out
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    for x in v.iter_mut() {
        *x = if sd > 0.0 { (*x - m) / sd } else { 0.0 };
    }
}

/// Response of one record; `None` when the record does not enter the model.
fn response(r: &ReviewRecord, outcome: Outcome) -> Option<f64> {
    match outcome {
        Outcome::Accuracy => Some(f64::from(u8::from(r.is_correct()))),
        Outcome::Confidence => Some(r.confidence.level() as f64),
        Outcome::Clarity => match r.clarity {
            Clarity::Clear => Some(1.0),
            Clarity::Confusing => Some(0.0),
            Clarity::NotApplicable => None,
        },
        Outcome::Time => Some(r.view_duration_s.ln_1p()),
    }
}

pub fn build_design_matrix(logs: &[ReviewRecord], outcome: Outcome, spec: &DesignSpec) -> Result<DesignMatrix> {
    build_design_matrix_with(logs, outcome, spec, &[], None)
}

/// As [`build_design_matrix`] with extra named per-record columns (aligned
/// with `logs`) appended after the controls, and an optional row filter.
pub fn build_design_matrix_with(
    logs: &[ReviewRecord],
    outcome: Outcome,
    spec: &DesignSpec,
    extra: &[(String, Vec<f64>)],
    keep: Option<&[bool]>,
) -> Result<DesignMatrix> {
    if logs.is_empty() {
        return Err(Error::Degenerate(format!("no records for the {} model", outcome.as_str())));
    }
    let exposure = exposure(logs);
    let rows: Vec<usize> = (0..logs.len())
        .filter(|&i| response(&logs[i], outcome).is_some() && keep.is_none_or(|k| k[i]))
        .filter(|&i| outcome != Outcome::Clarity || logs[i].arm != Arm::None)
        .collect();
    if rows.is_empty() {
        return Err(Error::Degenerate(format!("no usable records for the {} model", outcome.as_str())));
    }
    let y: Vec<f64> = rows.iter().map(|&i| response(&logs[i], outcome).expect("filtered")).collect();
    let distinct: BTreeSet<u64> = y.iter().map(|v| v.to_bits()).collect();
    if distinct.len() < 2 {
        return Err(Error::Degenerate(format!("the {} response has a single class", outcome.as_str())));
    }
    let recs: Vec<&ReviewRecord> = rows.iter().map(|&i| &logs[i]).collect();
    let n = rows.len();
    let mut cols: Vec<(String, Vec<f64>, bool)> = Vec::new();
    let intercept = outcome != Outcome::Confidence;
    if intercept {
        cols.push((INTERCEPT.to_string(), vec![1.0; n], true));
    }
    let ind = |f: &dyn Fn(&ReviewRecord) -> bool| -> Vec<f64> { recs.iter().map(|r| f64::from(u8::from(f(r)))).collect() };
    if spec.arms {
        if outcome == Outcome::Clarity {
            // Sum-to-zero contrasts; the last arm is coded -1 everywhere.
            let arms = &Arm::ALL[1..];
            let last = arms[arms.len() - 1];
            for &a in &arms[..arms.len() - 1] {
                let v = recs.iter().map(|r| if r.arm == a { 1.0 } else if r.arm == last { -1.0 } else { 0.0 }).collect();
                cols.push((arm_column(a), v, true));
            }
        } else {
            for &a in &Arm::ALL[1..] {
                cols.push((arm_column(a), ind(&|r| r.arm == a), true));
            }
        }
    }
    if spec.controls {
        let models: BTreeSet<&str> = recs.iter().map(|r| r.model_kind.as_str()).collect();
        for m in models.iter().skip(1) {
            cols.push((format!("model[{m}]"), ind(&|r| r.model_kind == *m), false));
        }
        let datasets: BTreeSet<&str> = recs.iter().map(|r| r.dataset.as_str()).collect();
        let reference = spec.dataset_reference.clone().unwrap_or_else(|| datasets.iter().next().map(|s| s.to_string()).unwrap_or_default());
        for ds in datasets.iter().filter(|d| **d != reference) {
            cols.push((format!("dataset[{ds}]"), ind(&|r| r.dataset == *ds), false));
        }
        cols.push(("entropy".into(), recs.iter().map(|r| predictive_entropy(r.score)).collect(), false));
        let mut err: Vec<f64> = recs.iter().map(|r| (r.score - f64::from(r.true_label)).abs()).collect();
        standardize(&mut err);
        cols.push(("score_error".into(), err, false));
        cols.push(("log_count".into(), rows.iter().map(|&i| exposure[i]).collect(), false));
        cols.push(("professional".into(), ind(&|r| r.profile.professional), false));
        cols.push(("ml[moderate]".into(), ind(&|r| r.profile.ml_knowledge == MlKnowledge::Moderate), false));
        cols.push(("ml[high]".into(), ind(&|r| r.profile.ml_knowledge == MlKnowledge::High), false));
        cols.push(("shapley[yes]".into(), ind(&|r| r.profile.shapley_familiarity.is_yes()), false));
        cols.push(("domain[yes]".into(), ind(&|r| r.profile.knows_domain(&r.dataset)), false));
        if spec.analyst_dummies {
            let analysts: BTreeSet<&str> = recs.iter().map(|r| r.analyst_id.as_str()).collect();
            for a in analysts.iter().skip(1) {
                cols.push((format!("analyst[{a}]"), ind(&|r| r.analyst_id == *a), false));
            }
        }
    }
    for (name, v) in extra {
        if v.len() != logs.len() {
            return Err(Error::Dimension { expected: logs.len(), got: v.len() });
        }
        cols.push((name.clone(), rows.iter().map(|&i| v[i]).collect(), true));
    }

    let mut dropped = Vec::new();
    cols.retain(|(name, v, protected)| {
        let constant = v.iter().all(|x| *x == v[0]);
        let keep = name == INTERCEPT || !constant || *protected;
        if !keep {
            dropped.push(name.clone());
        }
        keep
    });
    // Alias check, against a virtual intercept when the model has thresholds.
    let offset = usize::from(!intercept);
    let mut m = DMatrix::<f64>::zeros(n, cols.len() + offset);
    if !intercept {
        m.column_mut(0).fill(1.0);
    }
    for (j, (_, v, _)) in cols.iter().enumerate() {
        m.column_mut(j + offset).copy_from_slice(v);
    }
    let kept: BTreeSet<usize> = independent_columns(&m, 1e-9).into_iter().filter(|&j| j >= offset).map(|j| j - offset).collect();
    let mut final_cols = Vec::new();
    for (j, (name, v, protected)) in cols.into_iter().enumerate() {
        if kept.contains(&j) {
            final_cols.push((name, v));
        } else if protected {
            return Err(Error::Degenerate(format!("column {name} is aliased with earlier columns")));
        } else {
            dropped.push(name);
        }
    }
    let mut x = DMatrix::<f64>::zeros(n, final_cols.len());
    for (j, (_, v)) in final_cols.iter().enumerate() {
        x.column_mut(j).copy_from_slice(v);
    }
    Ok(DesignMatrix {
        outcome,
        response: y,
        columns: final_cols.into_iter().map(|c| c.0).collect(),
        x,
        dropped,
        rows,
        has_intercept: intercept,
    })
}
