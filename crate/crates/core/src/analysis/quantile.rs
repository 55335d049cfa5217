//! Linear quantile regression of log(1 + t) by averaged subgradient descent.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::design::{DesignMatrix, INTERCEPT};
use crate::linalg::solve_spd;
use crate::{rng, Error, Result};

pub const TIME_QUANTILES: [f64; 3] = [0.025, 0.5, 0.975];
pub const SE_BOOTSTRAP: &str = "bootstrap";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantileConfig {
    pub iterations: usize,
    pub boot_reps: usize,
    /// Iterations per bootstrap refit, warm-started at the full-sample fit.
    pub boot_iterations: usize,
    pub seed: u64,
}

impl Default for QuantileConfig {
    fn default() -> Self {
        QuantileConfig { iterations: 3000, boot_reps: 200, boot_iterations: 300, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub q: f64,
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub se_method: String,
    pub boot_reps: usize,
    pub objective: f64,
    pub n: usize,
}

impl QuantileFit {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * DVector::from_column_slice(&self.coef)
    }
}

pub fn pinball(r: f64, q: f64) -> f64 {
    if r >= 0.0 {
        q * r
    } else {
        (q - 1.0) * r
    }
}

fn objective(z: &DMatrix<f64>, y: &DVector<f64>, g: &DVector<f64>, q: f64) -> f64 {
    let r = y - z * g;
    r.iter().map(|&v| pinball(v, q)).sum::<f64>() / y.len() as f64
}

/// Columns centred and scaled; the intercept is kept as is.
struct Standardized {
    z: DMatrix<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    intercept: Option<usize>,
}

impl Standardized {
    fn new(d: &DesignMatrix) -> Self {
        let (n, p) = d.x.shape();
        let intercept = d.columns.iter().position(|c| c == INTERCEPT);
        let mut z = d.x.clone();
        let mut mean = vec![0.0; p];
        let mut scale = vec![1.0; p];
        for j in 0..p {
            if Some(j) == intercept {
                continue;
            }
            let col = d.x.column(j);
            let m = col.sum() / n as f64;
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            if s > 0.0 && intercept.is_some() {
                mean[j] = m;
                scale[j] = s;
            }
            for i in 0..n {
                z[(i, j)] = (d.x[(i, j)] - mean[j]) / scale[j];
            }
        }
        Standardized { z, mean, scale, intercept }
    }

    fn to_original(&self, g: &DVector<f64>) -> Vec<f64> {
        let mut b: Vec<f64> = g.iter().zip(&self.scale).map(|(v, s)| v / s).collect();
        if let Some(c) = self.intercept {
            b[c] -= b.iter().zip(&self.mean).map(|(v, m)| v * m).sum::<f64>();
        }
        b
    }
}

fn quantile_of(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    crate::dataset::quantile_sorted(&s, q)
}

/// Normalized subgradient steps `eta0 / sqrt(t + t0)` with Polyak averaging
/// over the second half; returns the better of the average and the best iterate.
fn descend(z: &DMatrix<f64>, y: &DVector<f64>, q: f64, start: DVector<f64>, iterations: usize, eta0: f64, t0: usize) -> DVector<f64> {
    let n = y.len() as f64;
    let mut g = start.clone();
    let mut best = start;
    let mut best_obj = objective(z, y, &best, q);
    let mut avg = DVector::zeros(g.len());
    let mut n_avg = 0.0;
    let half = iterations / 2;
    for t in 0..iterations {
        let r = y - z * &g;
        let w = DVector::from_iterator(r.len(), r.iter().map(|&v| if v > 0.0 { -q } else if v < 0.0 { 1.0 - q } else { 0.0 }));
        let sub = z.tr_mul(&w) / n;
        let norm = sub.norm();
        if norm == 0.0 {
            return g;
        }
        let eta = eta0 / ((t + t0 + 1) as f64).sqrt();
        g -= sub * (eta / norm);
        if t >= half {
            avg += &g;
            n_avg += 1.0;
            if t % 50 == 0 || t + 1 == iterations {
                let o = objective(z, y, &g, q);
                if o < best_obj {
                    best_obj = o;
                    best = g.clone();
                }
            }
        }
    }
    if n_avg > 0.0 {
        avg /= n_avg;
        if objective(z, y, &avg, q) <= best_obj {
            return avg;
        }
    }
    best
}

struct Solution {
    gamma: DVector<f64>,
    eta0: f64,
}

fn solve(st: &Standardized, y: &DVector<f64>, q: f64, iterations: usize) -> Result<Solution> {
    let z = &st.z;
    let p = z.ncols();
    let (mut gamma, _) = solve_spd(&z.tr_mul(z), &z.tr_mul(y), 1e-8).ok_or_else(|| Error::Degenerate("singular design for the time model".into()))?;
    let resid: Vec<f64> = (y - z * &gamma).iter().copied().collect();
    if let Some(c) = st.intercept {
        gamma[c] += quantile_of(&resid, q);
    }
    let med = quantile_of(&resid, 0.5);
    let mad: Vec<f64> = resid.iter().map(|r| (r - med).abs()).collect();
    let scale = quantile_of(&mad, 0.5).max(1e-12 * (1.0 + y.amax()));
    if resid.iter().all(|r| r.abs() <= 1e-12 * (1.0 + y.amax())) {
        return Ok(Solution { gamma, eta0: 0.0 });
    }
    let eta0 = scale * (p as f64).sqrt().max(1.0) * 0.5;
    Ok(Solution { gamma: descend(z, y, q, gamma, iterations, eta0, 0), eta0 })
}

/// Fit at quantile `q` with case-resampling bootstrap standard errors.
pub fn fit_quantile_logtime(d: &DesignMatrix, q: f64, cfg: &QuantileConfig) -> Result<QuantileFit> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("quantile {q} outside (0, 1)")));
    }
    let st = Standardized::new(d);
    let y = DVector::from_column_slice(&d.response);
    let sol = solve(&st, &y, q, cfg.iterations)?;
    let coef = st.to_original(&sol.gamma);
    let n = d.n();
    let p = coef.len();
    let mut sums = vec![0.0; p];
    let mut sq = vec![0.0; p];
    if sol.eta0 > 0.0 {
        for rep in 0..cfg.boot_reps {
            let mut r = rng::stream(cfg.seed, "quantile-boot", &[q.to_bits(), rep as u64]);
            let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            let zb = DMatrix::from_fn(n, p, |i, j| st.z[(idx[i], j)]);
            let yb = DVector::from_iterator(n, idx.iter().map(|&i| y[i]));
            let t0 = cfg.iterations / 4;
            let g = descend(&zb, &yb, q, sol.gamma.clone(), cfg.boot_iterations, sol.eta0, t0);
            for (j, v) in st.to_original(&g).into_iter().enumerate() {
                sums[j] += v;
                sq[j] += v * v;
            }
        }
    }
    let b = cfg.boot_reps as f64;
    let se = (0..p)
        .map(|j| if cfg.boot_reps > 1 && sol.eta0 > 0.0 { ((sq[j] - sums[j] * sums[j] / b) / (b - 1.0)).max(0.0).sqrt() } else { 0.0 })
        .collect();
    Ok(QuantileFit {
        q,
        names: d.columns.clone(),
        objective: objective(&st.z, &y, &sol.gamma, q),
        coef,
        se,
        se_method: SE_BOOTSTRAP.into(),
        boot_reps: cfg.boot_reps,
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingReport {
    pub n_rows: usize,
    pub violations: usize,
    pub fraction_ordered: f64,
    /// Indices of the first violating rows, capped at 20.
    pub examples: Vec<usize>,
}

/// Checks that fitted quantiles (sorted by `q`) are non-decreasing per row.
pub fn quantile_crossing(d: &DesignMatrix, fits: &[QuantileFit]) -> CrossingReport {
    let mut fits: Vec<&QuantileFit> = fits.iter().collect();
    fits.sort_by(|a, b| a.q.total_cmp(&b.q));
    let preds: Vec<DVector<f64>> = fits.iter().map(|f| f.predict(&d.x)).collect();
    let mut examples = Vec::new();
    let mut violations = 0;
    for i in 0..d.n() {
        if preds.windows(2).any(|w| w[1][i] < w[0][i] - 1e-12) {
            violations += 1;
            if examples.len() < 20 {
                examples.push(i);
            }
        }
    }
    CrossingReport {
        n_rows: d.n(),
        violations,
        fraction_ordered: if d.n() == 0 { 1.0 } else { 1.0 - violations as f64 / d.n() as f64 },
        examples,
    }
}
