//! Dataset preparation and model training shared by the CLI, the study
//! service and the end-to-end tests.

use serde::{Deserialize, Serialize};

use crate::dataset::{fit_preprocess, stratified_split, Dataset, PreprocessState, SplitSpec};
use crate::models::{gbdt_preset, logistic_preset, train_gbdt, train_logistic, GbdtConfig, LogisticConfig, Model, ModelKind};
use crate::{rng, Error, Result};

/// A split dataset in model space plus the fitted preprocessing state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prepared {
    pub name: String,
    pub split: SplitSpec,
    pub state: PreprocessState,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

pub fn prepare(raw: &Dataset, seed: u64) -> Result<Prepared> {
    let split = stratified_split(raw, seed)?;
    let train_raw = raw.subset(&split.train);
    let state = fit_preprocess(&train_raw)?;
    Ok(Prepared {
        name: raw.name.clone(),
        train: state.transform_dataset(&train_raw)?,
        validation: state.transform_dataset(&raw.subset(&split.validation))?,
        test: state.transform_dataset(&raw.subset(&split.test))?,
        split,
        state,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ModelConfigs {
    pub logistic: Option<LogisticConfig>,
    pub gbdt: Option<GbdtConfig>,
}

/// Train `kind` with the configured or preset hyperparameters.
pub fn train_model(p: &Prepared, kind: ModelKind, cfgs: &ModelConfigs, seed: u64) -> Result<Model> {
    match kind {
        ModelKind::Logistic => {
            let cfg = cfgs.logistic.clone().or_else(|| logistic_preset(&p.name)).unwrap_or_default();
            Ok(Model::Logistic(train_logistic(&p.train, &cfg)?))
        }
        ModelKind::Gbdt => {
            let mut cfg = cfgs
                .gbdt
                .clone()
                .or_else(|| gbdt_preset(&p.name))
                .ok_or_else(|| Error::InvalidParameter(format!("no GBDT configuration for dataset {:?}", p.name)))?;
            cfg.seed = rng::derive_seed(seed, "gbdt", &[]);
            Ok(Model::Gbdt(train_gbdt(&p.train, Some(&p.validation), &cfg)?))
        }
    }
}
