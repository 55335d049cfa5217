//! Effect estimates on the multiplicative scale and the Table-3 style table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::glm::GlmFit;
use super::quantile::QuantileFit;
use crate::{Error, Result};

pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    OddsRatio,
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub predictor: String,
    /// `exp(beta)`.
    pub effect: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Standard error of `effect`.
    pub se: f64,
    pub log_effect: f64,
    pub log_se: f64,
    pub scale: Scale,
    pub se_method: String,
}

impl EffectEstimate {
    pub fn covers(&self, effect: f64) -> bool {
        self.ci_lo <= effect && effect <= self.ci_hi
    }
}

/// `exp(beta)` with delta-method SE `exp(beta) * se` and CI `exp(beta +- z se)`.
pub fn delta_method_ci(predictor: &str, beta: f64, se: f64, scale: Scale) -> Result<EffectEstimate> {
    if !beta.is_finite() || !(se >= 0.0) || !se.is_finite() {
        return Err(Error::NonFinite(format!("effect for {predictor}")));
    }
    let effect = beta.exp();
    Ok(EffectEstimate {
        predictor: predictor.to_string(),
        effect,
        ci_lo: (beta - Z95 * se).exp(),
        ci_hi: (beta + Z95 * se).exp(),
        se: effect * se,
        log_effect: beta,
        log_se: se,
        scale,
        se_method: "delta".into(),
    })
}

/// Effect of the linear combination `sum w_i beta_i` over named parameters.
pub fn combination_effect(fit: &GlmFit, predictor: &str, weights: &[(&str, f64)], scale: Scale) -> Result<EffectEstimate> {
    let mut idx = Vec::with_capacity(weights.len());
    for (name, w) in weights {
        let i = fit.index(name).ok_or_else(|| Error::InvalidParameter(format!("no parameter {name}")))?;
        idx.push((i, *w));
    }
    let beta: f64 = idx.iter().map(|&(i, w)| w * fit.coef[i]).sum();
    let var: f64 = idx.iter().flat_map(|&(i, wi)| idx.iter().map(move |&(j, wj)| (i, j, wi * wj))).map(|(i, j, w)| w * fit.cov[i][j]).sum();
    delta_method_ci(predictor, beta, var.max(0.0).sqrt(), scale)
}

pub fn glm_effect(fit: &GlmFit, name: &str) -> Result<EffectEstimate> {
    combination_effect(fit, name, &[(name, 1.0)], Scale::OddsRatio)
}

pub fn quantile_effect(fit: &QuantileFit, name: &str) -> Result<EffectEstimate> {
    let i = fit.index(name).ok_or_else(|| Error::InvalidParameter(format!("no parameter {name}")))?;
    let mut e = delta_method_ci(name, fit.coef[i], fit.se[i], Scale::Multiplicative)?;
    e.se_method = fit.se_method.clone();
    Ok(e)
}

/// Column keys of the effect table, in display order.
pub fn table_columns() -> Vec<String> {
    ["time_p2.5", "time_p50", "time_p97.5", "accuracy", "clarity", "confidence"].iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub predictor: String,
    pub cells: BTreeMap<String, EffectEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTable {
    pub v: String,
    pub columns: Vec<String>,
    pub rows: Vec<EffectRow>,
}

impl EffectTable {
    pub fn get(&self, predictor: &str, column: &str) -> Option<&EffectEstimate> {
        self.rows.iter().find(|r| r.predictor == predictor)?.cells.get(column)
    }

    /// One line per predictor; each column contributes effect, CI bounds and SE.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("predictor");
        for c in &self.columns {
            out.push_str(&format!(",{c},{c}_ci_lo,{c}_ci_hi,{c}_se"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.predictor);
            for c in &self.columns {
                match r.cells.get(c) {
                    Some(e) => out.push_str(&format!(",{:.6},{:.6},{:.6},{:.6}", e.effect, e.ci_lo, e.ci_hi, e.se)),
                    None => out.push_str(",,,,"),
                }
            }
            out.push('\n');
        }
        out
    }
}
