//! Counterfactual search: greedy feature copying from a nearby target-side
//! training row, bisection on the last numeric change, then random
//! coordinate search. Accepted candidates are simplified to minimize the
//! number of changed features and then the L2 distance to x.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::CounterfactualParams;
use crate::dataset::Dataset;
use crate::models::Predictor;
use crate::{Error, Result};

/// Default target: `threshold -/+ margin`, on the other side of `fx`.
pub fn counterfactual_target(fx: f64, threshold: f64, margin: f64) -> f64 {
    if fx >= threshold {
        threshold - margin
    } else {
        threshold + margin
    }
}

/// Search context over a frozen model and a pool of training rows.
pub struct CounterfactualSearch<'a> {
    model: &'a dyn Predictor,
    rows: &'a [Vec<f64>],
    scores: Vec<f64>,
    categorical: Vec<bool>,
    scale: Vec<f64>,
    tolerance: f64,
    budget: usize,
    neighbors: usize,
}

struct Counter<'a> {
    model: &'a dyn Predictor,
    used: usize,
}

impl Counter<'_> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.used += 1;
        self.model.score(x)
    }
}

impl<'a> CounterfactualSearch<'a> {
    pub fn new(train: &'a Dataset, model: &'a dyn Predictor, params: &CounterfactualParams) -> Self {
        let scores = train.rows.iter().map(|r| model.score(r)).collect();
        let n = train.len().max(1) as f64;
        let scale = (0..train.dim())
            .map(|j| {
                let col = train.column(j);
                let m = col.iter().sum::<f64>() / n;
                (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt().max(1e-9)
            })
            .collect();
        CounterfactualSearch {
            model,
            rows: &train.rows,
            scores,
            categorical: train.schema.iter().map(|f| f.is_categorical()).collect(),
            scale,
            tolerance: params.tolerance,
            budget: params.budget,
            neighbors: params.neighbors,
        }
    }

    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.scale).map(|((x, y), s)| ((x - y) / s).powi(2)).sum()
    }

    fn seed_row(&self, x: &[f64], target: f64, rng: &mut ChaCha8Rng) -> Option<&'a [f64]> {
        if self.rows.is_empty() {
            return None;
        }
        let fx = self.model.score(x);
        let up = target > fx;
        let mut cands: Vec<usize> = (0..self.rows.len())
            .filter(|&i| {
                let s = self.scores[i];
                if up { s >= target - self.tolerance } else { s <= target + self.tolerance }
            })
            .collect();
        if cands.is_empty() {
            cands = (0..self.rows.len()).collect();
        }
        cands.sort_by(|&a, &b| self.distance(x, &self.rows[a]).total_cmp(&self.distance(x, &self.rows[b])).then(a.cmp(&b)));
        cands.truncate(self.neighbors);
        Some(&self.rows[*cands.choose(rng)?])
    }

    /// One counterfactual for `x` with `|f(c) - target| <= tolerance`.
    pub fn run(&self, x: &[f64], target: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let mut ctr = Counter { model: self.model, used: 0 };
        let tol = self.tolerance;
        let gap_of = |s: f64| (s - target).abs();
        let mut c = x.to_vec();
        let mut fc = ctr.eval(&c);
        if gap_of(fc) <= tol {
            return Ok(c);
        }
        let d = x.len();

        if let Some(seed) = self.seed_row(x, target, rng) {
            // Greedy copy of the single most helpful coordinate.
            while gap_of(fc) > tol && ctr.used < self.budget {
                let mut best: Option<(usize, f64)> = None;
                for j in 0..d {
                    if c[j] == seed[j] || ctr.used >= self.budget {
                        continue;
                    }
                    let old = c[j];
                    c[j] = seed[j];
                    let s = ctr.eval(&c);
                    c[j] = old;
                    if best.is_none_or(|(_, bs)| gap_of(s) < gap_of(bs)) {
                        best = Some((j, s));
                    }
                }
                let Some((j, s)) = best else { break };
                if gap_of(s) >= gap_of(fc) {
                    break;
                }
                let crossed = (s - target).signum() != (fc - target).signum();
                let old = c[j];
                c[j] = seed[j];
                fc = s;
                if gap_of(fc) > tol && crossed && !self.categorical[j] {
                    fc = self.bisect(&mut c, j, old, target, &mut ctr);
                }
            }
        }

        // Random coordinate search over the remaining budget.
        let mut pos = 0usize;
        while gap_of(fc) > tol && ctr.used < self.budget {
            let j = rng.random_range(0..d);
            let old = c[j];
            let proposal = if self.categorical[j] || self.rows.is_empty() || rng.random_bool(0.5) {
                if self.rows.is_empty() {
                    old + Normal::new(0.0, self.scale[j]).map(|n| n.sample(rng)).unwrap_or(0.0)
                } else {
                    self.rows[rng.random_range(0..self.rows.len())][j]
                }
            } else {
                old + Normal::new(0.0, 0.5 * self.scale[j]).map(|n| n.sample(rng)).unwrap_or(0.0)
            };
            c[j] = proposal;
            let s = ctr.eval(&c);
            if gap_of(s) < gap_of(fc) {
                fc = s;
            } else {
                c[j] = old;
            }
            pos += 1;
        }
        log::trace!("counterfactual search: {} evaluations, {pos} random proposals", ctr.used);
        if gap_of(fc) > tol {
            return Err(Error::CounterfactualNotFound {
                budget: self.budget,
                best_gap: gap_of(fc),
                best: c,
            });
        }
        self.simplify(x, &mut c, target, &mut ctr);
        Ok(c)
    }

    /// Move coordinate `j` between `from` (before) and `c[j]` (after) until the
    /// score is inside the tolerance band.
    fn bisect(&self, c: &mut [f64], j: usize, from: f64, target: f64, ctr: &mut Counter) -> f64 {
        let (mut lo, mut hi) = (from, c[j]);
        let mut buf = c.to_vec();
        buf[j] = lo;
        let side_lo = (self.model.score(&buf) - target).signum();
        let mut best = (f64::INFINITY, c[j], 0.0);
        for _ in 0..40 {
            if ctr.used >= self.budget {
                break;
            }
            let mid = 0.5 * (lo + hi);
            buf[j] = mid;
            let s = ctr.eval(&buf);
            let gap = (s - target).abs();
            if gap < best.0 {
                best = (gap, mid, s);
            }
            if gap <= self.tolerance {
                break;
            }
            if (s - target).signum() == side_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if best.0.is_finite() && best.0 < (self.model.score(c) - target).abs() {
            c[j] = best.1;
            best.2
        } else {
            self.model.score(c)
        }
    }

    /// Revert changed features where possible, then pull numeric changes
    /// toward x while staying inside the tolerance band.
    fn simplify(&self, x: &[f64], c: &mut [f64], target: f64, ctr: &mut Counter) {
        let tol = self.tolerance;
        let ok = |s: f64| (s - target).abs() <= tol;
        let mut changed: Vec<usize> = (0..x.len()).filter(|&j| c[j] != x[j]).collect();
        changed.sort_by(|&a, &b| {
            let da = ((c[a] - x[a]) / self.scale[a]).abs();
            let db = ((c[b] - x[b]) / self.scale[b]).abs();
            da.total_cmp(&db).then(a.cmp(&b))
        });
        for &j in &changed {
            if ctr.used >= self.budget {
                return;
            }
            let old = c[j];
            c[j] = x[j];
            if !ok(ctr.eval(c)) {
                c[j] = old;
            }
        }
        for &j in &changed {
            if c[j] == x[j] || self.categorical[j] {
                continue;
            }
            // Invariant: c[j] = good is inside the band, bad = x[j] is not.
            let (mut bad, mut good) = (x[j], c[j]);
            for _ in 0..30 {
                if ctr.used >= self.budget {
                    break;
                }
                let mid = 0.5 * (bad + good);
                c[j] = mid;
                if ok(ctr.eval(c)) {
                    good = mid;
                } else {
                    bad = mid;
                }
            }
            c[j] = good;
        }
    }
}

/// Single counterfactual for `x` against training rows `train`.
pub fn generate_counterfactual(
    x: &[f64],
    model: &dyn Predictor,
    target: f64,
    train: &Dataset,
    params: &CounterfactualParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if params.budget == 0 {
        return Err(Error::InvalidParameter("counterfactual budget must be >= 1".into()));
    }
    CounterfactualSearch::new(train, model, params).run(x, target, rng)
}
