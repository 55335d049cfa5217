//! Deletion and insertion curves on predictive entropy.

use super::importance_order;
use crate::models::{predictive_entropy, Predictor};
use crate::valuefunctions::{value, BackgroundSet, Coalition};

/// Feature removal by marginal imputation over a fixed background; `H` is
/// taken of the expected score.
pub struct Remover<'a> {
    pub model: &'a dyn Predictor,
    pub background: &'a BackgroundSet,
}

impl Remover<'_> {
    pub fn entropy_with_present(&self, x: &[f64], present: &Coalition) -> f64 {
        predictive_entropy(value(x, present, self.model, self.background))
    }
}

/// Entropies `H(x^(k))` for `k = 0..=d` features removed by decreasing |φ|.
pub fn deletion_path(x: &[f64], phi: &[f64], remover: &Remover) -> Vec<f64> {
    let d = x.len();
    let order = importance_order(phi);
    let mut present = Coalition::full(d);
    let mut out = Vec::with_capacity(d + 1);
    out.push(remover.entropy_with_present(x, &present));
    for &j in &order {
        present = Coalition::new(present.mask() & !(1u64 << j), d);
        out.push(remover.entropy_with_present(x, &present));
    }
    out
}

/// Entropies for `k = 0..=d` features reinserted by decreasing |φ|.
pub fn insertion_path(x: &[f64], phi: &[f64], remover: &Remover) -> Vec<f64> {
    let d = x.len();
    let order = importance_order(phi);
    let mut present = Coalition::empty(d);
    let mut out = Vec::with_capacity(d + 1);
    out.push(remover.entropy_with_present(x, &present));
    for &j in &order {
        present = present.with(j);
        out.push(remover.entropy_with_present(x, &present));
    }
    out
}

/// `1 − mean_k (H_k − H_0) / (H_d − H_0)`; `None` when `H_d = H_0`.
pub fn deletion_auc_from_path(h: &[f64]) -> Option<f64> {
    let d = h.len().checked_sub(1).filter(|&d| d > 0)?;
    let span = h[d] - h[0];
    if span == 0.0 || !span.is_finite() {
        return None;
    }
    Some(1.0 - h[1..].iter().map(|hk| (hk - h[0]) / span).sum::<f64>() / d as f64)
}

/// `mean_k (H_0 − H_k) / (H_0 − H_d)` on an insertion path; `None` when flat.
pub fn insertion_auc_from_path(h: &[f64]) -> Option<f64> {
    let d = h.len().checked_sub(1).filter(|&d| d > 0)?;
    let span = h[0] - h[d];
    if span == 0.0 || !span.is_finite() {
        return None;
    }
    Some(h[1..].iter().map(|hk| (h[0] - hk) / span).sum::<f64>() / d as f64)
}

pub fn deletion_auc(x: &[f64], phi: &[f64], remover: &Remover) -> Option<f64> {
    deletion_auc_from_path(&deletion_path(x, phi, remover))
}

pub fn insertion_auc(x: &[f64], phi: &[f64], remover: &Remover) -> Option<f64> {
    insertion_auc_from_path(&insertion_path(x, phi, remover))
}
