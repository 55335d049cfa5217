use std::sync::OnceLock;

use serde::Serialize;
use serde_json::json;
use shapval_core::dataset::{Dataset, FeatureSchema};
use shapval_core::metrics::{importance_order, sparsity_ratio, spearman_agreement};
use shapval_core::models::{sigmoid, FnPredictor, Predictor};
use shapval_core::oracle::exact_shapley;
use shapval_core::rng;
use shapval_core::valuefunctions::{ValueFunctionSpec, VariantKind};

use rand::Rng;

pub const FEATURES: [&str; 4] = ["income", "debt_ratio", "late_payments", "account_age"];
const WEIGHTS: [f64; 4] = [-1.4, 1.8, 2.2, -0.6];
const BIAS: f64 = -0.3;
pub const DEFAULT_X: [f64; 4] = [-0.4, 0.6, 0.5, 0.1];
const BACKGROUND: usize = 60;

/// Logistic score with one interaction between debt and late payments.
pub fn score(x: &[f64]) -> f64 {
    let lin: f64 = WEIGHTS.iter().zip(x).map(|(w, v)| w * v).sum();
    sigmoid(BIAS + lin + 0.8 * x[1] * x[2])
}

/// 300 correlated applicants in [-1, 1]; labels drawn from the score.
pub fn toy_data() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| {
        let mut g = rng::stream(7, "demo-data", &[]);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..300 {
            let income = 2.0 * g.random::<f64>() - 1.0;
            let debt = (0.6 * -income + 0.8 * (2.0 * g.random::<f64>() - 1.0)).clamp(-1.0, 1.0);
            let late = (0.5 * debt + 0.7 * (2.0 * g.random::<f64>() - 1.0)).clamp(-1.0, 1.0);
            let age = 2.0 * g.random::<f64>() - 1.0;
            let x = vec![income, debt, late, age];
            labels.push(u8::from(g.random::<f64>() < score(&x)));
            rows.push(x);
        }
        let schema = FEATURES.iter().enumerate().map(|(i, n)| FeatureSchema::numeric(n, i)).collect();
        Dataset::new("toy_credit", schema, rows, labels).expect("valid toy data")
    })
}

fn model() -> FnPredictor<fn(&[f64]) -> f64> {
    FnPredictor::new(4, score as fn(&[f64]) -> f64)
}

fn parse_x(x_json: &str) -> Result<Vec<f64>, String> {
    let x: Vec<f64> = serde_json::from_str(x_json).map_err(|e| format!("x must be a JSON array of numbers: {e}"))?;
    if x.len() != FEATURES.len() {
        return Err(format!("x must have {} values, got {}", FEATURES.len(), x.len()));
    }
    if x.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
        return Err("every value must lie in [-1, 1]".into());
    }
    Ok(x)
}

fn parse_variant(name: &str) -> Result<VariantKind, String> {
    VariantKind::ALL.into_iter().find(|k| k.as_str() == name).ok_or_else(|| format!("unknown variant {name:?}"))
}

#[derive(Debug, Clone, Serialize)]
pub struct Explanation {
    pub variant: String,
    pub phi: Vec<f64>,
    pub base: f64,
    pub fx: f64,
    pub efficiency_gap: f64,
    /// Feature indices by decreasing |φ|.
    pub order: Vec<usize>,
    pub sparsity: Option<f64>,
}

fn explain_kind(x: &[f64], kind: VariantKind) -> Result<Explanation, String> {
    let spec = ValueFunctionSpec::default_for(kind, 1).with_background_size(BACKGROUND);
    let m = model();
    let a = exact_shapley(x, &spec, &m, toy_data()).map_err(|e| e.to_string())?;
    Ok(Explanation {
        variant: kind.as_str().to_string(),
        efficiency_gap: a.efficiency_gap(),
        order: importance_order(&a.phi),
        sparsity: sparsity_ratio(&a.phi),
        fx: m.score(x),
        base: a.base,
        phi: a.phi,
    })
}

pub fn toy_info() -> String {
    json!({
        "features": FEATURES,
        "range": [-1.0, 1.0],
        "default_x": DEFAULT_X,
        "variants": VariantKind::ALL.iter().map(|k| k.as_str()).collect::<Vec<_>>(),
    })
    .to_string()
}

pub fn explain(x_json: &str, variant: &str) -> Result<String, String> {
    let x = parse_x(x_json)?;
    let e = explain_kind(&x, parse_variant(variant)?)?;
    serde_json::to_string(&e).map_err(|e| e.to_string())
}

pub fn compare(x_json: &str) -> Result<String, String> {
    let x = parse_x(x_json)?;
    let all = VariantKind::ALL.iter().map(|&k| explain_kind(&x, k)).collect::<Result<Vec<_>, _>>()?;
    let agreement: Vec<Vec<Option<f64>>> = all.iter().map(|a| all.iter().map(|b| spearman_agreement(&a.phi, &b.phi)).collect()).collect();
    serde_json::to_string(&json!({"fx": score(&x), "explanations": all, "agreement": agreement})).map_err(|e| e.to_string())
}
