//! Construction of background sets and Monte Carlo evaluation of `v_x(S)`.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::counterfactual::{counterfactual_target, CounterfactualSearch};
use super::{Coalition, ScoreInterval, ValueFunctionSpec, Variant, VariantKind};
use crate::dataset::Dataset;
use crate::models::Predictor;
use crate::{rng, Error, Result};

/// Kernel weighting state for the conditional variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelState {
    /// Per-feature standard deviation used to standardize distances.
    pub scale: Vec<f64>,
    /// Fixed bandwidth; `None` uses the median distance per coalition.
    pub bandwidth: Option<f64>,
}

impl KernelState {
    /// Normalized Gaussian kernel weights of `rows` around `x` on the
    /// features present in `s`.
    pub fn weights(&self, x: &[f64], s: &Coalition, rows: &[Vec<f64>]) -> Vec<f64> {
        let n = rows.len();
        if s.is_empty() || n == 0 {
            return vec![1.0 / n.max(1) as f64; n];
        }
        let present: Vec<usize> = s.indices().collect();
        let dist: Vec<f64> = rows
            .iter()
            .map(|r| {
                present
                    .iter()
                    .map(|&j| ((x[j] - r[j]) / self.scale[j]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let h = match self.bandwidth {
            Some(h) => h,
            None => median(&dist),
        };
        let mut w: Vec<f64> = if h > 0.0 {
            let dmin = dist.iter().copied().fold(f64::INFINITY, f64::min);
            // Shift by the nearest distance so at least one weight is 1.
            dist.iter().map(|&d| (-(d * d - dmin * dmin) / (2.0 * h * h)).exp()).collect()
        } else {
            let dmin = dist.iter().copied().fold(f64::INFINITY, f64::min);
            dist.iter().map(|&d| if d <= dmin { 1.0 } else { 0.0 }).collect()
        };
        let total: f64 = w.iter().sum();
        for v in &mut w {
            *v /= total;
        }
        w
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Rows used to fill absent features, in model space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSet {
    pub variant: VariantKind,
    pub rows: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelState>,
}

impl BackgroundSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

fn column_stats(train: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let n = train.len() as f64;
    let d = train.dim();
    let mut mean = vec![0.0; d];
    for r in &train.rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; d];
    for r in &train.rows {
        for j in 0..d {
            sd[j] += (r[j] - mean[j]).powi(2) / n;
        }
    }
    (mean, sd.into_iter().map(|v| v.sqrt().max(1e-9)).collect())
}

fn mode(col: &[f64]) -> f64 {
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut best, mut best_n, mut i) = (sorted[0], 0, 0);
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        if j > best_n {
            best = sorted[i];
            best_n = j;
        }
        i += j;
    }
    best
}

fn draw_rows<R: Rng>(rng: &mut R, candidates: &[&Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| candidates[rng.random_range(0..candidates.len())].clone()).collect()
}

/// Build the background set for instance `x` under `spec`.
pub fn build_background(train: &Dataset, spec: &ValueFunctionSpec, model: &dyn Predictor, x: &[f64]) -> Result<BackgroundSet> {
    let d = train.dim();
    spec.validate(d)?;
    if x.len() != d {
        return Err(Error::Dimension { expected: d, got: x.len() });
    }
    if train.is_empty() {
        return Err(Error::EmptyBackground {
            variant: spec.kind().to_string(),
            reason: "training set is empty".into(),
        });
    }
    let n = spec.background_size;
    let cat: Vec<bool> = train.schema.iter().map(|f| f.is_categorical()).collect();
    let mut kernel = None;
    let rows = match &spec.variant {
        Variant::FixedZero => vec![vec![0.0; d]],
        Variant::FixedMean { baseline } => match baseline {
            Some(b) => vec![b.clone()],
            None => {
                let (mean, _) = column_stats(train);
                vec![(0..d).map(|j| if cat[j] { mode(&train.column(j)) } else { mean[j] }).collect()]
            }
        },
        Variant::Uniform { bounds } => {
            let mut rng = rng::stream(spec.seed, "uniform", &[]);
            let levels: Vec<Vec<f64>> = (0..d)
                .map(|j| {
                    if !cat[j] {
                        return Vec::new();
                    }
                    let mut col = train.column(j);
                    col.sort_by(f64::total_cmp);
                    col.dedup();
                    col
                })
                .collect();
            let bounds: Vec<(f64, f64)> = match bounds {
                Some(b) => b.clone(),
                None => (0..d)
                    .map(|j| {
                        let col = train.column(j);
                        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        (lo, hi)
                    })
                    .collect(),
            };
            (0..n)
                .map(|_| {
                    (0..d)
                        .map(|j| {
                            if cat[j] {
                                levels[j][rng.random_range(0..levels[j].len())]
                            } else {
                                let (lo, hi) = bounds[j];
                                lo + (hi - lo) * rng.random::<f64>()
                            }
                        })
                        .collect()
                })
                .collect()
        }
        Variant::Marginal => {
            let mut rng = rng::stream(spec.seed, "marginal", &[]);
            let all: Vec<&Vec<f64>> = train.rows.iter().collect();
            draw_rows(&mut rng, &all, n)
        }
        Variant::JointMarginal => {
            let mut rng = rng::stream(spec.seed, "joint_marginal", &[]);
            let mut rows = vec![vec![0.0; d]; n];
            for j in 0..d {
                for r in rows.iter_mut() {
                    r[j] = train.rows[rng.random_range(0..train.len())][j];
                }
            }
            rows
        }
        Variant::Conditional { bandwidth, pool } => {
            let mut rng = rng::stream(spec.seed, "conditional", &[]);
            let size = pool.unwrap_or(n);
            let (_, sd) = column_stats(train);
            kernel = Some(KernelState { scale: sd, bandwidth: *bandwidth });
            if size >= train.len() {
                train.rows.clone()
            } else {
                let mut idx = index::sample(&mut rng, train.len(), size).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| train.rows[i].clone()).collect()
            }
        }
        Variant::FilteredConditional { filter } => {
            let fx = model.score(x);
            let filter = filter.unwrap_or_else(|| ScoreInterval::opposite_side(fx, spec.threshold));
            let candidates: Vec<&Vec<f64>> = train.rows.iter().filter(|r| filter.contains(model.score(r))).collect();
            if candidates.is_empty() {
                return Err(Error::EmptyBackground {
                    variant: spec.kind().to_string(),
                    reason: format!("no training row scores inside filter {filter}"),
                });
            }
            let mut rng = rng::stream(spec.seed, "marginal", &[]);
            draw_rows(&mut rng, &candidates, n)
        }
        Variant::Counterfactual(params) => {
            let search = CounterfactualSearch::new(train, model, params);
            let target = params.target.unwrap_or_else(|| counterfactual_target(model.score(x), spec.threshold, params.margin));
            let key = rng::hash_instance(x);
            let mut rows = Vec::with_capacity(n);
            let mut last_err = None;
            for j in 0..n {
                let mut rng = rng::stream(spec.seed, "counterfactual", &[key, j as u64]);
                match search.run(x, target, &mut rng) {
                    Ok(c) => rows.push(c),
                    Err(e) => last_err = Some(e),
                }
            }
            if rows.is_empty() {
                return Err(last_err.unwrap_or_else(|| Error::EmptyBackground {
                    variant: spec.kind().to_string(),
                    reason: "no counterfactual found".into(),
                }));
            }
            if rows.len() < n {
                log::debug!("counterfactual background kept {} of {n} draws", rows.len());
            }
            rows
        }
    };
    Ok(BackgroundSet {
        variant: spec.kind(),
        rows,
        kernel,
    })
}

fn splice_into(buf: &mut [f64], x: &[f64], s: &Coalition, row: &[f64]) {
    for j in 0..buf.len() {
        buf[j] = if s.contains(j) { x[j] } else { row[j] };
    }
}

/// Completed instances: x on `s`, the background row elsewhere.
pub fn impute(x: &[f64], s: &Coalition, bg: &BackgroundSet) -> Vec<Vec<f64>> {
    bg.rows
        .iter()
        .map(|r| {
            let mut out = vec![0.0; x.len()];
            splice_into(&mut out, x, s, r);
            out
        })
        .collect()
}

/// Expected score over the imputed batch (kernel-weighted for conditional).
pub fn value(x: &[f64], s: &Coalition, model: &dyn Predictor, bg: &BackgroundSet) -> f64 {
    if s.is_full() {
        return model.score(x);
    }
    let mut buf = vec![0.0; x.len()];
    match &bg.kernel {
        None => {
            let mut total = 0.0;
            for r in &bg.rows {
                splice_into(&mut buf, x, s, r);
                total += model.score(&buf);
            }
            total / bg.rows.len() as f64
        }
        Some(k) => {
            let w = k.weights(x, s, &bg.rows);
            let mut total = 0.0;
            let mut mass = 0.0;
            for (r, &wi) in bg.rows.iter().zip(&w) {
                if wi < 1e-15 {
                    continue;
                }
                splice_into(&mut buf, x, s, r);
                total += wi * model.score(&buf);
                mass += wi;
            }
            total / mass
        }
    }
}
