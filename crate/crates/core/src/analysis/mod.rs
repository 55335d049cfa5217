//! Outcome models for review logs: design matrices, logistic, proportional
//! odds and quantile fits, effect tables and the metric alignment regression.

mod design;
mod effects;
mod glm;
mod quantile;
#[cfg(test)]
mod tests;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use design::{arm_column, build_design_matrix, build_design_matrix_with, exposure, DesignMatrix, DesignSpec, Outcome, INTERCEPT};
pub use effects::{combination_effect, delta_method_ci, glm_effect, quantile_effect, table_columns, EffectEstimate, EffectRow, EffectTable, Scale, Z95};
pub use glm::{fit_logistic_mle, fit_ordinal_po, ordinal_loglik, GlmFit, FLAG_NOT_CONVERGED, FLAG_RIDGE_REFIT};
pub use quantile::{fit_quantile_logtime, pinball, quantile_crossing, CrossingReport, QuantileConfig, QuantileFit, SE_BOOTSTRAP, TIME_QUANTILES};

use crate::review::{Arm, ReviewRecord, SCHEMA_VERSION};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct AnalysisConfig {
    pub design: DesignSpec,
    pub quantile: QuantileConfig,
    /// Skip the quantile time models.
    pub skip_time: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub v: String,
    pub n_records: usize,
    pub config: AnalysisConfig,
    pub accuracy: GlmFit,
    pub confidence: GlmFit,
    pub clarity: GlmFit,
    pub time: Vec<QuantileFit>,
    pub crossing: Option<CrossingReport>,
    pub table: EffectTable,
    pub notes: Vec<String>,
}

/// Arm effects for the clarity model: fitted contrasts, plus the last arm
/// as minus their sum.
fn clarity_arm_effect(fit: &GlmFit, arm: Arm) -> Result<EffectEstimate> {
    let name = arm_column(arm);
    if fit.index(&name).is_some() {
        return glm_effect(fit, &name);
    }
    let others: Vec<String> = Arm::ALL[1..].iter().map(|&a| arm_column(a)).filter(|c| fit.index(c).is_some()).collect();
    let weights: Vec<(&str, f64)> = others.iter().map(|c| (c.as_str(), -1.0)).collect();
    combination_effect(fit, &name, &weights, Scale::OddsRatio)
}

fn is_control_row(name: &str) -> bool {
    name != INTERCEPT && !name.starts_with("analyst[") && !name.starts_with("threshold[")
}

pub fn effect_table(accuracy: &GlmFit, confidence: &GlmFit, clarity: &GlmFit, time: &[QuantileFit]) -> Result<EffectTable> {
    let columns = table_columns();
    let mut predictors: Vec<String> = Arm::ALL[1..].iter().map(|&a| arm_column(a)).collect();
    for fit_names in [&accuracy.names, &confidence.names, &clarity.names] {
        for n in fit_names.iter() {
            if is_control_row(n) && !predictors.contains(n) {
                predictors.push(n.clone());
            }
        }
    }
    let mut rows = Vec::new();
    for p in predictors {
        let mut cells = BTreeMap::new();
        for f in time {
            if f.index(&p).is_some() {
                let key = match f.q {
                    q if (q - 0.025).abs() < 1e-9 => "time_p2.5".to_string(),
                    q if (q - 0.5).abs() < 1e-9 => "time_p50".to_string(),
                    q if (q - 0.975).abs() < 1e-9 => "time_p97.5".to_string(),
                    q => format!("time_p{}", q * 100.0),
                };
                cells.insert(key, quantile_effect(f, &p)?);
            }
        }
        if accuracy.index(&p).is_some() {
            cells.insert("accuracy".into(), glm_effect(accuracy, &p)?);
        }
        if confidence.index(&p).is_some() {
            cells.insert("confidence".into(), glm_effect(confidence, &p)?);
        }
        if p.starts_with("arm[") {
            if let Ok(arm) = p.trim_start_matches("arm[").trim_end_matches(']').parse::<Arm>() {
                cells.insert("clarity".into(), clarity_arm_effect(clarity, arm)?);
            }
        } else if clarity.index(&p).is_some() {
            cells.insert("clarity".into(), glm_effect(clarity, &p)?);
        }
        rows.push(EffectRow { predictor: p, cells });
    }
    Ok(EffectTable { v: SCHEMA_VERSION.into(), columns, rows })
}

pub fn analyze_logs(logs: &[ReviewRecord], cfg: &AnalysisConfig) -> Result<AnalysisReport> {
    let d_acc = build_design_matrix(logs, Outcome::Accuracy, &cfg.design)?;
    let accuracy = fit_logistic_mle(&d_acc)?;
    let confidence = fit_ordinal_po(&build_design_matrix(logs, Outcome::Confidence, &cfg.design)?)?;
    let clarity = fit_logistic_mle(&build_design_matrix(logs, Outcome::Clarity, &cfg.design)?)?;
    let mut time = Vec::new();
    let mut crossing = None;
    if !cfg.skip_time {
        let d = build_design_matrix(logs, Outcome::Time, &cfg.design)?;
        for q in TIME_QUANTILES {
            time.push(fit_quantile_logtime(&d, q, &cfg.quantile)?);
        }
        crossing = Some(quantile_crossing(&d, &time));
    }
    let mut notes = vec![
        "analyst heterogeneity enters as fixed identity dummies".to_string(),
        "clarity arm effects use sum-to-zero contrasts over explained arms".to_string(),
        "log_count is log(1 + per-analyst running case index)".to_string(),
        format!("time effects: {} standard errors, {} replicates", SE_BOOTSTRAP, cfg.quantile.boot_reps),
        "glm effects: delta-method standard errors".to_string(),
    ];
    for (name, fit) in [("accuracy", &accuracy), ("confidence", &confidence), ("clarity", &clarity)] {
        if !fit.flags.is_empty() {
            notes.push(format!("{name}: {}", fit.flags.join(",")));
        }
        if !fit.dropped.is_empty() {
            notes.push(format!("{name}: dropped {}", fit.dropped.join(",")));
        }
    }
    let table = effect_table(&accuracy, &confidence, &clarity, &time)?;
    Ok(AnalysisReport {
        v: SCHEMA_VERSION.into(),
        n_records: logs.len(),
        config: cfg.clone(),
        accuracy,
        confidence,
        clarity,
        time,
        crossing,
        table,
        notes,
    })
}

/// Quantitative metrics of the explanation shown for one case and arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub dataset: String,
    pub model_kind: String,
    pub case_id: usize,
    pub arm: Arm,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRegressionSpec {
    /// `clarity` or `confidence`.
    pub response: Outcome,
    pub metrics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub v: String,
    pub response: Outcome,
    /// Effects per one standard deviation of each metric.
    pub effects: Vec<EffectEstimate>,
    pub n_used: usize,
    pub n_missing: usize,
    pub fit: GlmFit,
}

impl AlignmentResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("response,metric,effect,ci_lo,ci_hi,se\n");
        for e in &self.effects {
            out.push_str(&format!("{},{},{:.6},{:.6},{:.6},{:.6}\n", self.response.as_str(), e.predictor, e.effect, e.ci_lo, e.ci_hi, e.se));
        }
        out
    }
}

pub fn metric_column(name: &str) -> String {
    format!("metric[{name}]")
}

/// Regresses clarity (logistic) or confidence (proportional odds) on
/// standardized per-case metrics plus the control set.
pub fn alignment_regression(logs: &[ReviewRecord], metrics: &[CaseMetrics], spec: &AlignmentRegressionSpec, design: &DesignSpec) -> Result<AlignmentResult> {
    if spec.metrics.is_empty() {
        return Err(Error::InvalidParameter("alignment regression needs at least one metric".into()));
    }
    if !matches!(spec.response, Outcome::Clarity | Outcome::Confidence) {
        return Err(Error::InvalidParameter(format!("alignment response must be clarity or confidence, got {}", spec.response.as_str())));
    }
    let lookup: BTreeMap<(&str, &str, usize, Arm), &BTreeMap<String, f64>> =
        metrics.iter().map(|m| ((m.dataset.as_str(), m.model_kind.as_str(), m.case_id, m.arm), &m.values)).collect();
    let mut keep = vec![false; logs.len()];
    let mut cols: Vec<Vec<f64>> = vec![vec![0.0; logs.len()]; spec.metrics.len()];
    for (i, r) in logs.iter().enumerate() {
        if r.arm == Arm::None {
            continue;
        }
        let Some(vals) = lookup.get(&(r.dataset.as_str(), r.model_kind.as_str(), r.case_id, r.arm)) else { continue };
        let row: Option<Vec<f64>> = spec.metrics.iter().map(|m| vals.get(m).copied().filter(|v| v.is_finite())).collect();
        if let Some(row) = row {
            keep[i] = true;
            for (c, v) in cols.iter_mut().zip(row) {
                c[i] = v;
            }
        }
    }
    let n_used = keep.iter().filter(|&&k| k).count();
    let n_missing = logs.iter().filter(|r| r.arm != Arm::None).count() - n_used;
    if n_used < 2 {
        return Err(Error::Degenerate("fewer than two reviews have metrics".into()));
    }
    let mut extra = Vec::new();
    for (name, mut c) in spec.metrics.iter().zip(cols) {
        let used: Vec<f64> = c.iter().zip(&keep).filter(|(_, k)| **k).map(|(v, _)| *v).collect();
        let m = used.iter().sum::<f64>() / n_used as f64;
        let sd = (used.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n_used as f64).sqrt();
        if !(sd > 0.0) {
            return Err(Error::Degenerate(format!("metric {name} has zero variance")));
        }
        for v in c.iter_mut() {
            *v = (*v - m) / sd;
        }
        extra.push((metric_column(name), c));
    }
    let d_spec = DesignSpec { arms: false, ..design.clone() };
    let d = build_design_matrix_with(logs, spec.response, &d_spec, &extra, Some(&keep))?;
    let fit = match spec.response {
        Outcome::Clarity => fit_logistic_mle(&d)?,
        _ => fit_ordinal_po(&d)?,
    };
    let effects = spec.metrics.iter().map(|m| glm_effect(&fit, &metric_column(m)).map(|mut e| {
        e.predictor = m.clone();
        e
    })).collect::<Result<Vec<_>>>()?;
    Ok(AlignmentResult { v: SCHEMA_VERSION.into(), response: spec.response, effects, n_used, n_missing, fit })
}
