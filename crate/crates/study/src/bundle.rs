//! Everything needed to serve cases of one (dataset, model) pair.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use shapval_core::amortizer::{train_amortizer, Amortizer, TrainConfig};
use shapval_core::dataset::{Dataset, FeatureSchema};
use shapval_core::metrics::importance_order;
use shapval_core::models::{Model, ModelKind, Predictor};
use shapval_core::oracle::AttributionVector;
use shapval_core::pipeline::Prepared;
use shapval_core::valuefunctions::{ValueFunctionSpec, VariantKind, DEFAULT_THRESHOLD};

use crate::reasons::{display_name, display_value, reason_code, Bounds};
use crate::{StudyError, StudyResult};

pub const SCORE_BINS: usize = 20;
pub const TOP_FEATURES: usize = 4;
const FEATURE_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi]`; the last bin is closed.
    pub fn build(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            counts[Self::bin_of(v, lo, width, bins)] += 1;
        }
        Histogram { edges, counts }
    }

    fn bin_of(v: f64, lo: f64, width: f64, bins: usize) -> usize {
        (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
    }

    pub fn bin(&self, v: f64) -> usize {
        let bins = self.counts.len();
        let lo = self.edges[0];
        let width = (self.edges[bins] - lo) / bins as f64;
        Self::bin_of(v, lo, width, bins)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStat {
    pub level: String,
    pub prevalence: f64,
    /// Share of positive labels among training rows with this level.
    pub mean_label: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Distribution {
    Histogram { edges: Vec<f64>, counts: Vec<usize> },
    Levels { levels: Vec<LevelStat> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureView {
    pub feature: String,
    pub label: String,
    pub kind: String,
    pub value: String,
    /// Train percentile of the raw value, numeric features only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub percentile: Option<f64>,
    pub distribution: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub feature: String,
    pub label: String,
    pub value: String,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationBlock {
    pub bars: Vec<Bar>,
    pub reason_codes: Vec<String>,
    /// Full attribution vector, for audit.
    pub phi: Vec<f64>,
    pub base: f64,
}

/// Case content shared by every arm, plus the arm-specific explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseView {
    pub score: f64,
    pub percentile: f64,
    pub score_histogram: Histogram,
    pub score_bin: usize,
    pub features: Vec<FeatureView>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation: Option<ExplanationBlock>,
}

pub struct CaseBundle {
    pub dataset: String,
    pub model_kind: ModelKind,
    pub schema: Vec<FeatureSchema>,
    pub model: Model,
    /// Training split in model space, used for per-instance base values.
    pub train: Dataset,
    pub cases: Vec<Vec<f64>>,
    pub cases_raw: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub scores: Vec<f64>,
    pub threshold: f64,
    validation_sorted: Vec<f64>,
    score_histogram: Histogram,
    bounds: Vec<Option<Bounds>>,
    train_raw_sorted: Vec<Vec<f64>>,
    distributions: Vec<Distribution>,
    amortizers: BTreeMap<VariantKind, Amortizer>,
}

impl CaseBundle {
    /// `raw` is the full encoded dataset the split in `prepared` indexes into.
    pub fn new(raw: &Dataset, prepared: &Prepared, model: Model, amortizers: Vec<Amortizer>) -> StudyResult<Self> {
        let mut by_kind = BTreeMap::new();
        for a in amortizers {
            a.check_model(&model)?;
            if a.net.dim() != raw.dim() {
                return Err(StudyError::MissingCheckpoint(format!("amortizer for {} has the wrong width", a.variant())));
            }
            by_kind.insert(a.variant(), a);
        }
        let train_raw = raw.subset(&prepared.split.train);
        let test_raw = raw.subset(&prepared.split.test);
        let mut validation_sorted: Vec<f64> = prepared.validation.rows.iter().map(|r| model.score(r)).collect();
        validation_sorted.sort_by(f64::total_cmp);
        let score_histogram = Histogram::build(&validation_sorted, 0.0, 1.0, SCORE_BINS);
        let d = raw.dim();
        let mut bounds = Vec::with_capacity(d);
        let mut distributions = Vec::with_capacity(d);
        let mut train_raw_sorted = Vec::with_capacity(d);
        for (j, f) in raw.schema.iter().enumerate() {
            let col = train_raw.column(j);
            if f.is_categorical() {
                bounds.push(None);
                let n = col.len() as f64;
                let levels = f
                    .levels
                    .iter()
                    .enumerate()
                    .map(|(code, level)| {
                        let rows: Vec<usize> = (0..col.len()).filter(|&i| col[i] as usize == code).collect();
                        let pos = rows.iter().filter(|&&i| train_raw.labels[i] == 1).count() as f64;
                        LevelStat {
                            level: level.clone(),
                            prevalence: rows.len() as f64 / n,
                            mean_label: (!rows.is_empty()).then(|| pos / rows.len() as f64),
                        }
                    })
                    .collect();
                distributions.push(Distribution::Levels { levels });
                train_raw_sorted.push(Vec::new());
            } else {
                bounds.push(Some(Bounds::from_values(&col)));
                let mut sorted = col.clone();
                sorted.sort_by(f64::total_cmp);
                let h = Histogram::build(&sorted, sorted[0], sorted[sorted.len() - 1], FEATURE_BINS);
                distributions.push(Distribution::Histogram { edges: h.edges, counts: h.counts });
                train_raw_sorted.push(sorted);
            }
        }
        let scores = prepared.test.rows.iter().map(|r| model.score(r)).collect();
        Ok(CaseBundle {
            dataset: raw.name.clone(),
            model_kind: model.kind(),
            schema: raw.schema.clone(),
            train: prepared.train.clone(),
            cases: prepared.test.rows.clone(),
            cases_raw: test_raw.rows,
            labels: test_raw.labels,
            scores,
            threshold: DEFAULT_THRESHOLD,
            model,
            validation_sorted,
            score_histogram,
            bounds,
            train_raw_sorted,
            distributions,
            amortizers: by_kind,
        })
    }

    pub fn dim(&self) -> usize {
        self.schema.len()
    }

    pub fn missing_variants(&self) -> Vec<VariantKind> {
        VariantKind::ALL.into_iter().filter(|k| !self.amortizers.contains_key(k)).collect()
    }

    pub fn amortizer(&self, kind: VariantKind) -> Option<&Amortizer> {
        self.amortizers.get(&kind)
    }

    /// Percentage of validation scores at or below `score`.
    pub fn percentile(&self, score: f64) -> f64 {
        let n = self.validation_sorted.len().max(1) as f64;
        100.0 * self.validation_sorted.partition_point(|&v| v <= score) as f64 / n
    }

    /// The attribution vector served for model-space instance `x`.
    pub fn attribution(&self, x: &[f64], kind: VariantKind) -> StudyResult<AttributionVector> {
        let a = self.amortizers.get(&kind).ok_or_else(|| StudyError::MissingCheckpoint(format!("no amortizer for {kind}")))?;
        let base = a.base_for(x, &self.model, &self.train)?;
        Ok(a.explain(x, &self.model, base)?)
    }

    pub fn fingerprint(&self, kind: VariantKind) -> String {
        self.amortizers.get(&kind).map(|a| format!("{}:{}", a.spec.fingerprint(), a.model_fingerprint)).unwrap_or_default()
    }

    pub fn display_values(&self, case: usize) -> Vec<String> {
        self.schema.iter().zip(&self.cases_raw[case]).map(|(f, &v)| display_value(f, v)).collect()
    }

    fn raw_percentile(&self, j: usize, v: f64) -> f64 {
        let s = &self.train_raw_sorted[j];
        100.0 * s.partition_point(|&t| t <= v) as f64 / s.len().max(1) as f64
    }

    /// Top-|φ| bars and reason codes.
    pub fn explanation_block(&self, case: usize, attr: &AttributionVector) -> ExplanationBlock {
        let raw = &self.cases_raw[case];
        let top: Vec<usize> = importance_order(&attr.phi).into_iter().take(TOP_FEATURES.min(self.dim())).collect();
        let bars = top
            .iter()
            .map(|&j| Bar {
                feature: self.schema[j].name.clone(),
                label: display_name(&self.schema[j].name),
                value: display_value(&self.schema[j], raw[j]),
                phi: attr.phi[j],
            })
            .collect();
        let reason_codes = top.iter().map(|&j| reason_code(&self.schema[j], raw[j], attr.phi[j], self.bounds[j].as_ref())).collect();
        ExplanationBlock { bars, reason_codes, phi: attr.phi.clone(), base: attr.base }
    }

    /// The full case view; `kind = None` is the no-explanation control.
    pub fn case_view(&self, case: usize, kind: Option<VariantKind>) -> StudyResult<CaseView> {
        if case >= self.cases.len() {
            return Err(StudyError::Validation(format!("case {case} out of range")));
        }
        let score = self.scores[case];
        let raw = &self.cases_raw[case];
        let features = self
            .schema
            .iter()
            .enumerate()
            .map(|(j, f)| FeatureView {
                feature: f.name.clone(),
                label: display_name(&f.name),
                kind: if f.is_categorical() { "categorical" } else { "numeric" }.to_string(),
                value: display_value(f, raw[j]),
                percentile: (!f.is_categorical()).then(|| self.raw_percentile(j, raw[j])),
                distribution: self.distributions[j].clone(),
            })
            .collect();
        let explanation = match kind {
            None => None,
            Some(k) => Some(self.explanation_block(case, &self.attribution(&self.cases[case], k)?)),
        };
        Ok(CaseView {
            score,
            percentile: self.percentile(score),
            score_bin: self.score_histogram.bin(score),
            score_histogram: self.score_histogram.clone(),
            features,
            explanation,
        })
    }
}

/// Trains one amortizer per spec and assembles the bundle.
pub fn train_bundle(raw: &Dataset, prepared: &Prepared, model: Model, specs: &[ValueFunctionSpec], cfg: &TrainConfig) -> StudyResult<CaseBundle> {
    let fp = model.fingerprint();
    let amortizers = specs
        .iter()
        .map(|spec| {
            log::info!("training amortizer for {}", spec.kind());
            train_amortizer(&prepared.train, &model, spec, cfg, &fp)
        })
        .collect::<Result<Vec<_>, _>>()?;
    CaseBundle::new(raw, prepared, model, amortizers)
}
