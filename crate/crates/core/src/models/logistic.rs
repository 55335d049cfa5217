//! L2-regularized logistic regression fitted by damped Newton (IRLS).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::sigmoid;
use crate::dataset::Dataset;
use crate::{linalg, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Model-space weights, one per feature.
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Inverse regularization strength the model was fitted with.
    pub c: f64,
}

impl LinearModel {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    /// Inverse L2 strength; penalty is `||w||^2 / (2C)`.
    pub c: f64,
    /// Convergence threshold on the max-abs gradient.
    pub tol: f64,
    pub max_iter: usize,
    /// Weight samples by `n / (2 n_class)`.
    pub balanced: bool,
    pub fit_intercept: bool,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            c: 1.0,
            tol: 1e-4,
            max_iter: 100,
            balanced: true,
            fit_intercept: true,
        }
    }
}

/// Penalized weighted log-loss over a design; parameters are
/// `[w_0, .., w_{d-1}, b]` (the intercept slot is pinned to 0 when unused).
pub struct LogisticObjective<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [u8],
    sample_weight: Vec<f64>,
    penalty: f64,
    fit_intercept: bool,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(rows: &'a [Vec<f64>], labels: &'a [u8], cfg: &LogisticConfig) -> Self {
        let n = labels.len() as f64;
        let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
        let n_neg = n - n_pos;
        let sample_weight = labels
            .iter()
            .map(|&y| {
                if !cfg.balanced {
                    1.0
                } else if y == 1 {
                    n / (2.0 * n_pos.max(1.0))
                } else {
                    n / (2.0 * n_neg.max(1.0))
                }
            })
            .collect();
        LogisticObjective {
            rows,
            labels,
            sample_weight,
            penalty: 1.0 / cfg.c,
            fit_intercept: cfg.fit_intercept,
        }
    }

    fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn logit(&self, params: &[f64], x: &[f64]) -> f64 {
        let d = self.dim();
        params[d] + params[..d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        let d = self.dim();
        let data: f64 = self
            .rows
            .iter()
            .zip(self.labels)
            .zip(&self.sample_weight)
            .map(|((x, &y), &s)| {
                let z = self.logit(params, x);
                // log(1 + e^z) - y z, computed stably
                let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                s * (softplus - f64::from(y) * z)
            })
            .sum();
        data + 0.5 * self.penalty * params[..d].iter().map(|w| w * w).sum::<f64>()
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut g = vec![0.0; d + 1];
        for ((x, &y), &s) in self.rows.iter().zip(self.labels).zip(&self.sample_weight) {
            let r = s * (sigmoid(self.logit(params, x)) - f64::from(y));
            for j in 0..d {
                g[j] += r * x[j];
            }
            g[d] += r;
        }
        for j in 0..d {
            g[j] += self.penalty * params[j];
        }
        if !self.fit_intercept {
            g[d] = 0.0;
        }
        g
    }

    fn hessian(&self, params: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut h = DMatrix::zeros(d + 1, d + 1);
        let mut xa = vec![0.0; d + 1];
        for (x, &s) in self.rows.iter().zip(&self.sample_weight) {
            let p = sigmoid(self.logit(params, x));
            let w = s * p * (1.0 - p);
            xa[..d].copy_from_slice(x);
            xa[d] = 1.0;
            for a in 0..=d {
                let wa = w * xa[a];
                for b in a..=d {
                    h[(a, b)] += wa * xa[b];
                }
            }
        }
        for a in 0..=d {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        for j in 0..d {
            h[(j, j)] += self.penalty;
        }
        if !self.fit_intercept {
            for j in 0..=d {
                h[(d, j)] = 0.0;
                h[(j, d)] = 0.0;
            }
            h[(d, d)] = 1.0;
        }
        h
    }
}

pub fn train_logistic(train: &Dataset, cfg: &LogisticConfig) -> Result<LinearModel> {
    if train.is_empty() {
        return Err(Error::Degenerate("empty training set".into()));
    }
    if cfg.c <= 0.0 {
        return Err(Error::InvalidParameter("C must be positive".into()));
    }
    let d = train.dim();
    let obj = LogisticObjective::new(&train.rows, &train.labels, cfg);
    let mut params = vec![0.0; d + 1];
    let mut loss = obj.loss(&params);
    for iter in 0..cfg.max_iter {
        let g = obj.gradient(&params);
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax <= cfg.tol {
            log::debug!("logistic converged after {iter} iterations (|g| = {gmax:.3e})");
            break;
        }
        let h = obj.hessian(&params);
        let (step, _) = linalg::solve_spd(&h, &DVector::from_vec(g.clone()), 1e-10)
            .ok_or_else(|| Error::Diverged("singular Hessian in logistic fit".into()))?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p - t * s).collect();
            let l = obj.loss(&cand);
            if !l.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss at iteration {iter}")));
            }
            if l <= loss {
                params = cand;
                loss = l;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Diverged("non-finite final loss".into()));
    }
    Ok(LinearModel {
        weights: params[..d].to_vec(),
        intercept: if cfg.fit_intercept { params[d] } else { 0.0 },
        c: cfg.c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureSchema;
    use rand::Rng;

    fn toy(xs: &[f64], ys: &[u8]) -> Dataset {
        Dataset::new(
            "toy",
            vec![FeatureSchema::numeric("x", 0)],
            xs.iter().map(|&x| vec![x]).collect(),
            ys.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn separable_toy_is_fitted_exactly() {
        let xs: Vec<f64> = (-10..=10).filter(|&i| i != 0).map(|i| f64::from(i) * 0.5).filter(|x| x.abs() >= 1.0).collect();
        let ys: Vec<u8> = xs.iter().map(|&x| u8::from(x > 0.0)).collect();
        let m = train_logistic(&toy(&xs, &ys), &LogisticConfig { c: 10.0, ..Default::default() }).unwrap();
        let acc = xs.iter().zip(&ys).filter(|(x, &y)| u8::from(m.score(&[**x]) > 0.5) == y).count();
        assert_eq!(acc, xs.len());
    }

    #[test]
    fn single_class_drives_scores_up() {
        let xs = [-1.0, 0.0, 1.0, 2.0];
        let ys = [1, 1, 1, 1];
        let weak = train_logistic(&toy(&xs, &ys), &LogisticConfig { c: 1e6, max_iter: 200, tol: 1e-10, ..Default::default() }).unwrap();
        for x in xs {
            assert!(weak.score(&[x]) > 0.99);
        }
    }

    #[test]
    fn zero_model_scores_half() {
        let m = LinearModel { weights: vec![0.0, 0.0], intercept: 0.0, c: 1.0 };
        assert_eq!(m.score(&[3.0, -2.0]), 0.5);
        let m = LinearModel { weights: vec![1.0], intercept: 0.0, c: 1.0 };
        assert_eq!(m.score(&[0.0]), 0.5);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = crate::rng::stream(5, "grad-check", &[]);
        for _ in 0..10 {
            let rows: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let labels: Vec<u8> = (0..12).map(|_| u8::from(rng.random_bool(0.4))).collect();
            let cfg = LogisticConfig { c: 0.7, ..Default::default() };
            let obj = LogisticObjective::new(&rows, &labels, &cfg);
            let params: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = obj.gradient(&params);
            for j in 0..4 {
                let h = 1e-5;
                let mut p1 = params.clone();
                let mut p2 = params.clone();
                p1[j] += h;
                p2[j] -= h;
                let fd = (obj.loss(&p1) - obj.loss(&p2)) / (2.0 * h);
                let rel = (fd - g[j]).abs() / g[j].abs().max(1e-8);
                assert!(rel < 1e-5, "j={j} fd={fd} g={}", g[j]);
            }
        }
    }

    #[test]
    fn positive_weight_is_monotone() {
        let m = LinearModel { weights: vec![0.8, -0.3], intercept: 0.1, c: 1.0 };
        let mut prev = 0.0;
        for i in 0..20 {
            let s = m.score(&[f64::from(i) * 0.3 - 3.0, 1.0]);
            assert!(s >= prev);
            prev = s;
        }
    }
}
