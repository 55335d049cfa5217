//! Per-pair evaluation: every explainer on every instance, all metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    attribution_error, contrastivity, deletion_auc, insertion_auc, perturbation_sensitivity, recall_at_k, sparsity_ratio, InstanceMetrics, Metric,
    PairKey, PerturbationSpec, Perturber, Remover, DELTA,
};
use crate::dataset::Dataset;
use crate::models::Predictor;
use crate::valuefunctions::{
    build_background, counterfactual_target, generate_counterfactual, CounterfactualParams, ValueFunctionSpec, Variant, VariantKind, DEFAULT_THRESHOLD,
};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub perturbation: PerturbationSpec,
    pub delta: f64,
    pub counterfactual: CounterfactualParams,
    pub threshold: f64,
    /// Size of the marginal background used for feature removal.
    pub remover_background: usize,
    pub sensitivity: bool,
    pub contrastivity: bool,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            perturbation: PerturbationSpec::default(),
            delta: DELTA,
            counterfactual: CounterfactualParams::default(),
            threshold: DEFAULT_THRESHOLD,
            remover_background: 100,
            sensitivity: true,
            contrastivity: true,
            seed: 0,
        }
    }
}

pub type ExplainFn<'a> = Box<dyn Fn(&[f64]) -> Result<Vec<f64>> + 'a>;

pub struct Explainer<'a> {
    pub variant: VariantKind,
    pub explain: ExplainFn<'a>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEvaluation {
    pub pair: PairKey,
    pub variants: Vec<VariantKind>,
    pub records: Vec<InstanceMetrics>,
    /// `attributions[v][i]` for variant index `v` and instance `i`.
    pub attributions: Vec<Vec<Vec<f64>>>,
    pub counterfactual_failures: usize,
}

/// Inputs shared by every explainer of one (dataset, model) pair.
pub struct PairContext<'a> {
    pub pair: PairKey,
    pub train: &'a Dataset,
    pub model: &'a dyn Predictor,
    pub perturber: &'a Perturber,
    /// Oracle attributions per variant, aligned with the instances.
    pub references: Option<&'a BTreeMap<VariantKind, Vec<Vec<f64>>>>,
}

pub fn evaluate_pair(ctx: &PairContext, instances: &[Vec<f64>], explainers: &[Explainer], settings: &EvalSettings) -> Result<PairEvaluation> {
    if explainers.is_empty() {
        return Err(Error::InvalidParameter("no explainers to evaluate".into()));
    }
    let d = ctx.train.dim();
    let remover_spec = ValueFunctionSpec::new(Variant::Marginal, rng::derive_seed(settings.seed, "remover", &[])).with_background_size(settings.remover_background);
    let probe = instances.first().ok_or_else(|| Error::Degenerate("no instances to evaluate".into()))?;
    let remover_bg = build_background(ctx.train, &remover_spec, ctx.model, probe)?;
    let remover = Remover { model: ctx.model, background: &remover_bg };

    let mut counterfactuals = Vec::with_capacity(instances.len());
    let mut failures = 0;
    for (i, x) in instances.iter().enumerate() {
        if x.len() != d {
            return Err(Error::Dimension { expected: d, got: x.len() });
        }
        let cf = if settings.contrastivity {
            let fx = ctx.model.score(x);
            let target = settings.counterfactual.target.unwrap_or_else(|| counterfactual_target(fx, settings.threshold, settings.counterfactual.margin));
            let mut r = rng::stream(settings.seed, "contrast-cf", &[i as u64]);
            match generate_counterfactual(x, ctx.model, target, ctx.train, &settings.counterfactual, &mut r) {
                Ok(c) => Some(c),
                Err(Error::CounterfactualNotFound { .. }) => {
                    failures += 1;
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        counterfactuals.push(cf);
    }

    let mut records = Vec::with_capacity(instances.len() * explainers.len());
    let mut attributions = Vec::with_capacity(explainers.len());
    for ex in explainers {
        let reference = ctx.references.and_then(|r| r.get(&ex.variant));
        let mut phis = Vec::with_capacity(instances.len());
        for (i, x) in instances.iter().enumerate() {
            let phi = (ex.explain)(x)?;
            if phi.len() != d {
                return Err(Error::Dimension { expected: d, got: phi.len() });
            }
            let fx = ctx.model.score(x);
            let mut values: BTreeMap<Metric, Option<f64>> = BTreeMap::new();
            values.insert(Metric::Sparsity, sparsity_ratio(&phi));
            values.insert(Metric::DeletionAuc, deletion_auc(x, &phi, &remover));
            values.insert(Metric::InsertionAuc, insertion_auc(x, &phi, &remover));
            if settings.sensitivity {
                let mut r = rng::stream(settings.seed, "sensitivity", &[i as u64]);
                let s = perturbation_sensitivity(x, &|z: &[f64]| (ex.explain)(z), ctx.model, ctx.perturber, settings.delta, &mut r)?;
                values.insert(Metric::Sensitivity, Some(s));
            }
            if settings.contrastivity {
                let c = match &counterfactuals[i] {
                    Some(cf) => Some(contrastivity(&phi, &(ex.explain)(cf)?, fx, ctx.model.score(cf), settings.delta)),
                    None => None,
                };
                values.insert(Metric::Contrastivity, c);
            }
            if let Some(refs) = reference {
                let r = refs.get(i).ok_or_else(|| Error::Dimension { expected: instances.len(), got: refs.len() })?;
                values.insert(Metric::AttributionError, Some(attribution_error(&phi, r)));
                values.insert(Metric::Recall1, Some(recall_at_k(&phi, r, 1)));
                values.insert(Metric::Recall3, Some(recall_at_k(&phi, r, 3)));
                values.insert(Metric::Recall5, Some(recall_at_k(&phi, r, 5)));
            }
            records.push(InstanceMetrics { pair: ctx.pair.clone(), variant: ex.variant, instance: i, values });
            phis.push(phi);
        }
        attributions.push(phis);
    }
    Ok(PairEvaluation {
        pair: ctx.pair.clone(),
        variants: explainers.iter().map(|e| e.variant).collect(),
        records,
        attributions,
        counterfactual_failures: failures,
    })
}
