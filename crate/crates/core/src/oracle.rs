//! Ground-truth attribution engines: exact enumeration and constrained
//! KernelSHAP.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::linalg::solve_spd;
use crate::models::Predictor;
use crate::valuefunctions::{build_background, Coalition, CoalitionGame, InstanceGame, ValueFunctionSpec};
use crate::{rng, Error, Result};

pub const EXACT_MAX_FEATURES: usize = 14;
pub const RIDGE: f64 = 1e-8;
pub const FLAG_RIDGE: &str = "ridge_fallback";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub variant: String,
    /// `v_x(∅)`.
    pub base: f64,
    /// `f(x)`.
    pub fx: f64,
    pub phi: Vec<f64>,
    /// Coalitions evaluated (0 for amortized output).
    pub n_samples: usize,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl AttributionVector {
    pub fn efficiency_gap(&self) -> f64 {
        (self.phi.iter().sum::<f64>() - (self.fx - self.base)).abs()
    }

    pub fn is_finite(&self) -> bool {
        self.base.is_finite() && self.fx.is_finite() && self.phi.iter().all(|v| v.is_finite())
    }
}

/// Binomial coefficient as f64 (exact for the sizes used here).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight `(d-1) / (C(d,s) s (d-s))` for `1 <= s <= d-1`.
pub fn shapley_kernel_weight(d: usize, s: usize) -> Result<f64> {
    if s == 0 || s >= d {
        return Err(Error::InvalidParameter(format!(
            "kernel weight is infinite for s = {s} with d = {d}; endpoints are constraints"
        )));
    }
    Ok((d - 1) as f64 / (binomial(d, s) * s as f64 * (d - s) as f64))
}

/// Kernel mass per coalition size, normalized over `1..d`.
pub fn kernel_size_distribution(d: usize) -> Vec<f64> {
    if d < 2 {
        return Vec::new();
    }
    let mass: Vec<f64> = (1..d).map(|s| (d - 1) as f64 / (s * (d - s)) as f64).collect();
    let z: f64 = mass.iter().sum();
    mass.into_iter().map(|m| m / z).collect()
}

fn draw_size<R: Rng>(rng: &mut R, cdf: &[f64]) -> usize {
    let u: f64 = rng.random();
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1) + 1
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Random coalition of size drawn from the kernel size distribution.
pub fn sample_coalition<R: Rng>(rng: &mut R, d: usize) -> Coalition {
    let cdf = cumulative(&kernel_size_distribution(d));
    let s = draw_size(rng, &cdf);
    let idx = index::sample(rng, d, s);
    Coalition::from_indices(d, &idx.into_vec())
}

/// Paired samples: each draw is followed by its complement. `n` is rounded
/// up to an even count. Empty for `d < 2`.
pub fn sample_coalitions(d: usize, n: usize, seed: u64) -> Vec<Coalition> {
    if d < 2 {
        return Vec::new();
    }
    let mut rng = rng::stream(seed, "coalitions", &[d as u64]);
    let cdf = cumulative(&kernel_size_distribution(d));
    let pairs = n.div_ceil(2);
    let mut out = Vec::with_capacity(2 * pairs);
    for _ in 0..pairs {
        let s = draw_size(&mut rng, &cdf);
        let idx = index::sample(&mut rng, d, s).into_vec();
        let c = Coalition::from_indices(d, &idx);
        out.push(c);
        out.push(c.complement());
    }
    out
}

/// Exact Shapley values of an arbitrary game by full enumeration.
pub fn exact_shapley_game(game: &dyn CoalitionGame) -> Result<AttributionVector> {
    let d = game.dim();
    if d > EXACT_MAX_FEATURES {
        return Err(Error::TooManyFeatures(d));
    }
    let n = 1usize << d;
    let values: Vec<f64> = (0..n).map(|m| game.value(&Coalition::new(m as u64, d))).collect();
    // w(s) = s! (d-s-1)! / d!
    let w: Vec<f64> = (0..d).map(|s| 1.0 / (d as f64 * binomial(d - 1, s))).collect();
    let mut phi = vec![0.0; d];
    for m in 0..n {
        let s = (m as u64).count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if m >> i & 1 == 0 {
                *p += w[s] * (values[m | 1 << i] - values[m]);
            }
        }
    }
    Ok(AttributionVector {
        variant: String::new(),
        base: values[0],
        fx: values[n - 1],
        phi,
        n_samples: n,
        flags: Vec::new(),
    })
}

/// Exact Shapley values of `model` at `x` under `spec`.
pub fn exact_shapley(x: &[f64], spec: &ValueFunctionSpec, model: &dyn Predictor, train: &Dataset) -> Result<AttributionVector> {
    if x.len() > EXACT_MAX_FEATURES {
        return Err(Error::TooManyFeatures(x.len()));
    }
    let bg = build_background(train, spec, model, x)?;
    let mut out = exact_shapley_game(&InstanceGame::new(x, model, &bg))?;
    out.variant = spec.kind().to_string();
    Ok(out)
}

/// Constrained weighted least squares over `(coalition, weight)` pairs with
/// `Σφ = v(F) - v(∅)` enforced by eliminating the last coordinate.
pub fn kernelshap_from_samples(game: &dyn CoalitionGame, samples: &[(Coalition, f64)]) -> Result<AttributionVector> {
    let d = game.dim();
    let full = Coalition::full(d);
    let base = game.value(&Coalition::empty(d));
    let fx = game.value(&full);
    let delta = fx - base;
    let mut flags = Vec::new();
    if d <= 1 {
        return Ok(AttributionVector {
            variant: String::new(),
            base,
            fx,
            phi: vec![delta; d],
            n_samples: 2,
            flags,
        });
    }
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let k = d - 1;
    let mut xtwx = DMatrix::<f64>::zeros(k, k);
    let mut xtwy = DVector::<f64>::zeros(k);
    let mut row = vec![0.0; k];
    for (s, w) in samples {
        if s.is_empty() || s.is_full() {
            continue;
        }
        if !(w.is_finite() && *w > 0.0) {
            return Err(Error::InvalidParameter(format!("coalition weight {w} must be positive and finite")));
        }
        let v = *cache.entry(s.mask()).or_insert_with(|| game.value(s));
        let zd = f64::from(u8::from(s.contains(d - 1)));
        let y = v - base - zd * delta;
        for (i, r) in row.iter_mut().enumerate() {
            *r = f64::from(u8::from(s.contains(i))) - zd;
        }
        for i in 0..k {
            if row[i] == 0.0 {
                continue;
            }
            xtwy[i] += w * row[i] * y;
            for j in 0..k {
                xtwx[(i, j)] += w * row[i] * row[j];
            }
        }
    }
    let (sol, ridged) = solve_spd(&xtwx, &xtwy, RIDGE)
        .ok_or_else(|| Error::Degenerate("KernelSHAP normal equations are singular even with ridge".into()))?;
    if ridged {
        flags.push(FLAG_RIDGE.to_string());
    }
    let mut phi: Vec<f64> = sol.iter().copied().collect();
    phi.push(delta - phi.iter().sum::<f64>());
    Ok(AttributionVector {
        variant: String::new(),
        base,
        fx,
        phi,
        n_samples: cache.len() + 2,
        flags,
    })
}

/// Coalition budget for KernelSHAP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "n")]
pub enum Budget {
    /// All `2^d - 2` proper coalitions with kernel weights.
    Full,
    /// Paired kernel-distributed samples with unit weights.
    Sampled(usize),
}

impl Budget {
    /// Full enumeration up to 14 features, otherwise `2048 d` samples.
    pub fn reference(d: usize) -> Budget {
        if d <= EXACT_MAX_FEATURES {
            Budget::Full
        } else {
            Budget::Sampled(2048 * d)
        }
    }
}

pub fn all_proper_coalitions(d: usize) -> Result<Vec<(Coalition, f64)>> {
    if d > 24 {
        return Err(Error::TooManyFeatures(d));
    }
    (1..(1u64 << d) - 1)
        .map(|m| {
            let c = Coalition::new(m, d);
            Ok((c, shapley_kernel_weight(d, c.size())?))
        })
        .collect()
}

pub fn kernelshap_game(game: &dyn CoalitionGame, budget: Budget, seed: u64) -> Result<AttributionVector> {
    let d = game.dim();
    let samples = match budget {
        Budget::Full => all_proper_coalitions(d)?,
        Budget::Sampled(n) => {
            if n < d {
                return Err(Error::InvalidParameter(format!("KernelSHAP needs n >= d ({n} < {d})")));
            }
            sample_coalitions(d, n, seed).into_iter().map(|c| (c, 1.0)).collect()
        }
    };
    kernelshap_from_samples(game, &samples)
}

/// KernelSHAP estimate of `model` at `x`; sampling is keyed by `seed` and x.
pub fn kernelshap_estimate(
    x: &[f64],
    spec: &ValueFunctionSpec,
    model: &dyn Predictor,
    train: &Dataset,
    budget: Budget,
    seed: u64,
) -> Result<AttributionVector> {
    let bg = build_background(train, spec, model, x)?;
    let seed = rng::derive_seed(seed, "kernelshap", &[rng::hash_instance(x)]);
    let mut out = kernelshap_game(&InstanceGame::new(x, model, &bg), budget, seed)?;
    out.variant = spec.kind().to_string();
    Ok(out)
}
