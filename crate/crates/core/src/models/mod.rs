//! Predictors behind a single scoring contract.

mod gbdt;
mod logistic;
mod presets;

pub use gbdt::{train_gbdt, GbdtConfig, Node, Tree, TreeEnsemble};
pub use logistic::{train_logistic, LinearModel, LogisticConfig, LogisticObjective};
pub use presets::{gbdt_preset, logistic_preset};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "shapval-model/v1";

/// Scoring contract shared by every model and by test doubles.
///
/// `score` is the hot path used inside value-function evaluation and does no
/// validation; use [`predict_score`] at API boundaries.
pub trait Predictor: Send + Sync {
    fn dim(&self) -> usize;
    fn score(&self, x: &[f64]) -> f64;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score(&self, x: &[f64]) -> f64 {
        (**self).score(x)
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score(&self, x: &[f64]) -> f64 {
        (**self).score(x)
    }
}

/// Wraps a closure as a predictor; used for analytic toys.
pub struct FnPredictor<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> FnPredictor<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnPredictor { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> Predictor for FnPredictor<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn score(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Gbdt,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Gbdt => "gbdt",
        }
    }

    pub fn all() -> [ModelKind; 2] {
        [ModelKind::Logistic, ModelKind::Gbdt]
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(ModelKind::Logistic),
            "gbdt" => Ok(ModelKind::Gbdt),
            other => Err(Error::InvalidParameter(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Logistic(LinearModel),
    Gbdt(TreeEnsemble),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Logistic(_) => ModelKind::Logistic,
            Model::Gbdt(_) => ModelKind::Gbdt,
        }
    }

    /// Short content hash; amortizer checkpoints are bound to it.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).unwrap_or_default();
        format!("{:016x}", crate::rng::derive_seed(0, "model-fingerprint", &[fnv(&bytes)]))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ck = Checkpoint {
            format: MODEL_FORMAT.to_string(),
            model: self.clone(),
        };
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_vec_pretty(&ck)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        if ck.format != MODEL_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported model format {:?}", ck.format)));
        }
        Ok(ck.model)
    }
}

fn fnv(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    model: Model,
}

impl Predictor for Model {
    fn dim(&self) -> usize {
        match self {
            Model::Logistic(m) => m.weights.len(),
            Model::Gbdt(m) => m.dim,
        }
    }

    fn score(&self, x: &[f64]) -> f64 {
        match self {
            Model::Logistic(m) => m.score(x),
            Model::Gbdt(m) => m.score(x),
        }
    }
}

/// Validated scoring: checks dimensionality and finiteness.
pub fn predict_score(model: &dyn Predictor, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: x.len(),
        });
    }
    if let Some(j) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("feature {j}")));
    }
    Ok(model.score(x))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary predictive entropy in nats, `H(0) = H(1) = 0`.
pub fn predictive_entropy(p: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.ln() };
    term(p) + term(1.0 - p)
}

/// Area under the ROC curve with average ranks for tied scores.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let ranks = crate::metrics::average_ranks(scores);
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return f64::NAN;
    }
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(r, _)| r).sum();
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

pub fn log_loss(scores: &[f64], labels: &[u8]) -> f64 {
    let eps = 1e-15;
    scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / scores.len().max(1) as f64
}
