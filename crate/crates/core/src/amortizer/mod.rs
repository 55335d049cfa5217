//! Amortized explainers: a network trained on the KernelSHAP objective that
//! returns attributions in one forward pass.

mod net;
mod train;

pub use net::{AmortizerNet, Embedding, NetShape};
pub use train::{amortizer_loss, amortizer_loss_grad, LossItem};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::models::{Model, Predictor};
use crate::oracle::AttributionVector;
use crate::valuefunctions::{build_background, value, Coalition, ScoreInterval, ValueFunctionSpec, Variant, VariantKind};
use crate::{Error, Result};

pub const AMORTIZER_FORMAT: &str = "shapval-amortizer/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Adam learning rate.
    pub learning_rate: f64,
    pub masks_per_input: usize,
    pub efficiency_weight: f64,
    /// Linear warmup length as a fraction of all epochs.
    pub warmup_fraction: f64,
    /// Fraction of epochs trained with Adam before switching to SGD.
    pub adam_fraction: f64,
    /// Peak SGD learning rate, decayed by a cosine.
    pub sgd_learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub dropout: f64,
    /// Hidden width; defaults to `max(64, 4d)`.
    pub hidden: Option<usize>,
    pub blocks: usize,
    /// Train on a random subset of this many instances.
    pub max_instances: Option<usize>,
    /// Fixed pool of masks per instance with precomputed targets.
    pub mask_pool: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            learning_rate: 0.001,
            masks_per_input: 4,
            efficiency_weight: 0.1,
            warmup_fraction: 0.05,
            adam_fraction: 0.5,
            sgd_learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            dropout: 0.1,
            hidden: None,
            blocks: 3,
            max_instances: None,
            mask_pool: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.efficiency_weight, self.sgd_learning_rate];
        if self.epochs == 0 || self.masks_per_input == 0 || self.batch_size == 0 || self.blocks == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter("train config values must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..=1.0).contains(&self.adam_fraction) || !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidParameter("dropout, adam_fraction and warmup_fraction must be fractions".into()));
        }
        if self.mask_pool == Some(0) || self.max_instances == Some(0) || self.hidden == Some(0) {
            return Err(Error::InvalidParameter("mask_pool, max_instances and hidden must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub n_instances: usize,
    pub n_params: usize,
}

/// How `v_x(∅)` is obtained at inference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseValue {
    Constant { value: f64 },
    /// Depends only on which side of the threshold f(x) falls.
    BySide { threshold: f64, below: f64, above: f64 },
    /// Rebuilt from the instance's own background.
    PerInstance,
}

/// A trained explainer bound to one model and one value function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Amortizer {
    pub format: String,
    pub spec: ValueFunctionSpec,
    pub config: TrainConfig,
    pub model_fingerprint: String,
    pub base: BaseValue,
    pub net: AmortizerNet,
    pub report: TrainReport,
}

fn mean_score(model: &dyn Predictor, rows: &[Vec<f64>]) -> f64 {
    rows.iter().map(|r| model.score(r)).sum::<f64>() / rows.len() as f64
}

/// Resolve the inference-time base value rule for `spec`.
pub fn base_value_rule(train: &Dataset, model: &dyn Predictor, spec: &ValueFunctionSpec) -> Result<BaseValue> {
    let d = train.dim();
    let probe = train.rows.first().ok_or_else(|| Error::Degenerate("empty training set".into()))?;
    match &spec.variant {
        Variant::Counterfactual(_) => Ok(BaseValue::PerInstance),
        Variant::FilteredConditional { filter: None } => {
            let side = |fx: f64| -> Result<f64> {
                let mut s = spec.clone();
                s.variant = Variant::FilteredConditional {
                    filter: Some(ScoreInterval::opposite_side(fx, spec.threshold)),
                };
                Ok(mean_score(model, &build_background(train, &s, model, probe)?.rows))
            };
            Ok(BaseValue::BySide {
                threshold: spec.threshold,
                below: side(0.0)?,
                above: side(1.0)?,
            })
        }
        _ => {
            let bg = build_background(train, spec, model, probe)?;
            Ok(BaseValue::Constant {
                value: value(probe, &Coalition::empty(d), model, &bg),
            })
        }
    }
}

/// Train an explainer for `model` under `spec`.
pub fn train_amortizer(train: &Dataset, model: &dyn Predictor, spec: &ValueFunctionSpec, cfg: &TrainConfig, model_fingerprint: &str) -> Result<Amortizer> {
    train_amortizer_with(train, model, spec, cfg, model_fingerprint, &mut |_, _, _| {})
}

/// As [`train_amortizer`], calling `on_epoch(epoch, net, loss)` after each epoch.
pub fn train_amortizer_with(
    train: &Dataset,
    model: &dyn Predictor,
    spec: &ValueFunctionSpec,
    cfg: &TrainConfig,
    model_fingerprint: &str,
    on_epoch: &mut dyn FnMut(usize, &AmortizerNet, f64),
) -> Result<Amortizer> {
    cfg.validate()?;
    spec.validate(train.dim())?;
    if model.dim() != train.dim() {
        return Err(Error::Dimension { expected: train.dim(), got: model.dim() });
    }
    let prep = train::prepare(train, model, spec, cfg)?;
    let (net, report) = train::train_loop(train, model, &prep, cfg, on_epoch)?;
    Ok(Amortizer {
        format: AMORTIZER_FORMAT.to_string(),
        spec: spec.clone(),
        config: cfg.clone(),
        model_fingerprint: model_fingerprint.to_string(),
        base: base_value_rule(train, model, spec)?,
        net,
        report,
    })
}

/// Single forward pass plus the additive efficiency correction
/// `φ̂ ← φ̂ + (f(x) − base − Σφ̂)/d`.
pub fn predict_attributions(net: &AmortizerNet, x: &[f64], model: &dyn Predictor, base: f64) -> Result<AttributionVector> {
    let d = net.dim();
    if x.len() != d || model.dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: if x.len() != d { x.len() } else { model.dim() },
        });
    }
    let mut phi = net.forward(x);
    let fx = model.score(x);
    let corr = (fx - base - phi.iter().sum::<f64>()) / d as f64;
    for v in &mut phi {
        *v += corr;
    }
    Ok(AttributionVector {
        variant: String::new(),
        base,
        fx,
        phi,
        n_samples: 0,
        flags: Vec::new(),
    })
}

impl Amortizer {
    pub fn variant(&self) -> VariantKind {
        self.spec.kind()
    }

    /// `v_x(∅)` under the stored rule; `train` is only used for per-instance rules.
    pub fn base_for(&self, x: &[f64], model: &dyn Predictor, train: &Dataset) -> Result<f64> {
        match &self.base {
            BaseValue::Constant { value } => Ok(*value),
            BaseValue::BySide { threshold, below, above } => Ok(if model.score(x) >= *threshold { *above } else { *below }),
            BaseValue::PerInstance => {
                let bg = build_background(train, &self.spec, model, x)?;
                Ok(value(x, &Coalition::empty(x.len()), model, &bg))
            }
        }
    }

    pub fn explain(&self, x: &[f64], model: &dyn Predictor, base: f64) -> Result<AttributionVector> {
        let mut out = predict_attributions(&self.net, x, model, base)?;
        out.variant = self.variant().to_string();
        Ok(out)
    }

    pub fn check_model(&self, model: &Model) -> Result<()> {
        let fp = model.fingerprint();
        if fp != self.model_fingerprint {
            return Err(Error::Checkpoint(format!(
                "amortizer was trained for model {} but got {fp}",
                self.model_fingerprint
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Amortizer> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let a: Amortizer = serde_json::from_slice(&bytes)?;
        a.check_format()?;
        Ok(a)
    }

    /// Format tag and parameter count agree with the recorded shape.
    pub fn check_format(&self) -> Result<()> {
        if self.format != AMORTIZER_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported amortizer format {:?}", self.format)));
        }
        if self.net.params.len() != self.net.shape.n_params() {
            return Err(Error::Checkpoint("parameter count does not match the recorded shape".into()));
        }
        Ok(())
    }
}
