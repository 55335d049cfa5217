//! Quantitative proxies for explanation quality, fidelity controls against
//! the oracle, and the cross-pair aggregation protocol.

mod aggregate;
mod curves;
mod evaluate;
mod stability;

pub use aggregate::{
    aggregate_report, bootstrap_mean_se, rank_table, AgreementMatrix, InstanceMetrics, Metric, MetricReport, MetricRow, PairKey,
};
pub use curves::{deletion_auc, deletion_auc_from_path, deletion_path, insertion_auc, insertion_auc_from_path, insertion_path, Remover};
pub use evaluate::{evaluate_pair, EvalSettings, ExplainFn, Explainer, PairContext, PairEvaluation};
pub use stability::{contrastivity, perturbation_sensitivity, PerturbationSpec, Perturber, DELTA};

/// 1-based ranks in ascending order; ties share their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Feature indices by decreasing |φ|, ties by ascending index.
pub fn importance_order(phi: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..phi.len()).collect();
    idx.sort_by(|&a, &b| phi[b].abs().total_cmp(&phi[a].abs()).then(a.cmp(&b)));
    idx
}

/// `‖φ‖₁ / ‖φ‖₂`, in `[1, √d]`; `None` for the zero vector.
pub fn sparsity_ratio(phi: &[f64]) -> Option<f64> {
    let l2 = phi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if l2 == 0.0 || !l2.is_finite() {
        return None;
    }
    Some(phi.iter().map(|v| v.abs()).sum::<f64>() / l2)
}

/// Mean squared difference over features.
pub fn attribution_error(phi_hat: &[f64], phi_ref: &[f64]) -> f64 {
    assert_eq!(phi_hat.len(), phi_ref.len(), "attribution vectors differ in length");
    phi_hat.iter().zip(phi_ref).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / phi_hat.len().max(1) as f64
}

/// Overlap of the top-k features by |φ|; `k` is clamped to `d`.
pub fn recall_at_k(phi_hat: &[f64], phi_ref: &[f64], k: usize) -> f64 {
    let k = k.min(phi_hat.len());
    if k == 0 {
        return 1.0;
    }
    let a = &importance_order(phi_hat)[..k];
    let b = &importance_order(phi_ref)[..k];
    a.iter().filter(|i| b.contains(i)).count() as f64 / k as f64
}

/// Spearman correlation of |φ| ranks; `None` if either side has no rank variance.
pub fn spearman_agreement(phi_a: &[f64], phi_b: &[f64]) -> Option<f64> {
    let ra = average_ranks(&phi_a.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let rb = average_ranks(&phi_b.iter().map(|v| v.abs()).collect::<Vec<_>>());
    pearson(&ra, &rb)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}
