//! Perturbation sensitivity and contrastivity.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PreprocessState};
use crate::models::Predictor;
use crate::Result;

pub const DELTA: f64 = 1e-6;

/// Perturbation law for sensitivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Gaussian noise standard deviation in IQR units for numeric features.
    pub sigma_iqr: f64,
    /// Resampling probability for categorical features.
    pub categorical_prob: f64,
    pub n_draws: usize,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            sigma_iqr: 0.1,
            categorical_prob: 0.1,
            n_draws: 10,
        }
    }
}

#[derive(Debug, Clone)]
enum Space {
    /// Model-space values are `tanh(u)` with `u` in IQR units divided by the saturation.
    Tanh { saturation: f64 },
    /// Values are raw; noise is scaled by a per-feature IQR.
    Linear { iqr: Vec<f64> },
}

/// Samples `x + ε` under a [`PerturbationSpec`].
#[derive(Debug, Clone)]
pub struct Perturber {
    spec: PerturbationSpec,
    space: Space,
    categorical: Vec<bool>,
    columns: Vec<Vec<f64>>,
}

impl Perturber {
    /// For model-space data produced by `state`.
    pub fn model_space(train: &Dataset, state: &PreprocessState, spec: PerturbationSpec) -> Self {
        Self::build(train, spec, Space::Tanh { saturation: state.saturation })
    }

    /// For raw data; the IQR is measured on `train`.
    pub fn raw(train: &Dataset, spec: PerturbationSpec) -> Self {
        let iqr = (0..train.dim())
            .map(|j| {
                let mut col = train.column(j);
                col.sort_by(f64::total_cmp);
                let q = |p: f64| crate::dataset::quantile_sorted(&col, p);
                (q(0.75) - q(0.25)).max(1e-9)
            })
            .collect();
        Self::build(train, spec, Space::Linear { iqr })
    }

    fn build(train: &Dataset, spec: PerturbationSpec, space: Space) -> Self {
        let categorical: Vec<bool> = train.schema.iter().map(|f| f.is_categorical()).collect();
        let columns = (0..train.dim()).map(|j| if categorical[j] { train.column(j) } else { Vec::new() }).collect();
        Perturber { spec, space, categorical, columns }
    }

    pub fn spec(&self) -> &PerturbationSpec {
        &self.spec
    }

    pub fn perturb(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                if self.categorical[j] {
                    if rng.random_bool(self.spec.categorical_prob.clamp(0.0, 1.0)) && !self.columns[j].is_empty() {
                        self.columns[j][rng.random_range(0..self.columns[j].len())]
                    } else {
                        v
                    }
                } else {
                    let e: f64 = normal.sample(rng) * self.spec.sigma_iqr;
                    match &self.space {
                        Space::Tanh { saturation } => {
                            let z = v.clamp(-1.0 + 1e-12, 1.0 - 1e-12);
                            (z.atanh() + e / saturation).tanh()
                        }
                        Space::Linear { iqr } => v + e * iqr[j],
                    }
                }
            })
            .collect()
    }
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean of `‖φ̂(x+ε) − φ̂(x)‖₂ / (|f(x+ε) − f(x)| + δ)` over draws.
pub fn perturbation_sensitivity(
    x: &[f64],
    explain: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    model: &dyn Predictor,
    perturber: &Perturber,
    delta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let base = explain(x)?;
    let fx = model.score(x);
    let n = perturber.spec.n_draws.max(1);
    let mut total = 0.0;
    for _ in 0..n {
        let xe = perturber.perturb(x, rng);
        let pe = explain(&xe)?;
        total += l2_diff(&pe, &base) / ((model.score(&xe) - fx).abs() + delta);
    }
    Ok(total / n as f64)
}

/// `‖φ̂(x) − φ̂(x′)‖₂ / (|f(x) − f(x′)| + δ)`.
pub fn contrastivity(phi_x: &[f64], phi_cf: &[f64], fx: f64, fcf: f64, delta: f64) -> f64 {
    l2_diff(phi_x, phi_cf) / ((fx - fcf).abs() + delta)
}
