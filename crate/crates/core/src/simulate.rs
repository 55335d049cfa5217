//! Synthetic review logs with planted effects, used to validate the
//! analysis pipeline against a known generator.
//!
//! Each response is drawn from a logistic (accuracy, clarity), latent
//! logistic (confidence) or log-normal (time) model keyed on the true label,
//! the model score, the arm and an analyst offset.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::models::{predictive_entropy, sigmoid};
use crate::review::{blocked_arms, AnalystProfile, Arm, Clarity, Confidence, Decision, MlKnowledge, ReviewRecord, YesNo, SCHEMA_VERSION};
use crate::{rng, Error, Result};

/// Arm effects relative to the no-explanation control.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedEffects {
    /// Odds ratio of a correct decision.
    pub accuracy_or: BTreeMap<Arm, f64>,
    /// Shift of the latent confidence, log-odds scale.
    pub confidence_shift: BTreeMap<Arm, f64>,
    /// Odds ratio of a clear rating (relative to the generator's baseline).
    pub clarity_or: BTreeMap<Arm, f64>,
    /// Multiplicative effect on `1 + t`.
    pub time_multiplier: BTreeMap<Arm, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSpec {
    pub n_records: usize,
    pub n_analysts: usize,
    pub datasets: Vec<String>,
    pub models: Vec<String>,
    pub planted: PlantedEffects,
    /// Accuracy log-odds of the control arm at average difficulty.
    pub base_accuracy_logit: f64,
    /// Standard deviation of analyst offsets on every outcome.
    pub analyst_sd: f64,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            n_records: 4000,
            n_analysts: 37,
            datasets: ["german_credit", "maternal_risk", "heloc", "adult"].map(String::from).to_vec(),
            models: ["logistic", "gbdt"].map(String::from).to_vec(),
            planted: PlantedEffects::default(),
            base_accuracy_logit: 1.0,
            analyst_sd: 0.3,
            seed: 0,
        }
    }
}

const CONFIDENCE_CUTS: [f64; 2] = [-0.8, 1.0];

fn logistic_noise<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(1e-12..1.0 - 1e-12);
    (u / (1.0 - u)).ln()
}

fn profile<R: Rng>(rng: &mut R, id: &str, datasets: &[String]) -> AnalystProfile {
    let yn = |b: bool| if b { YesNo::Yes } else { YesNo::No };
    AnalystProfile {
        analyst_id: id.to_string(),
        professional: rng.random_bool(0.3),
        ml_knowledge: [MlKnowledge::Low, MlKnowledge::Moderate, MlKnowledge::High][rng.random_range(0..3)],
        shapley_familiarity: yn(rng.random_bool(0.4)),
        domain_knowledge: datasets.iter().map(|d| (d.clone(), yn(rng.random_bool(0.5)))).collect(),
    }
}

pub fn simulate_analysts(spec: &SimulationSpec) -> Result<Vec<ReviewRecord>> {
    if spec.n_analysts == 0 || spec.datasets.is_empty() || spec.models.is_empty() {
        return Err(Error::InvalidParameter("simulation needs analysts, datasets and models".into()));
    }
    let mut rng = rng::stream(spec.seed, "simulate", &[]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p = &spec.planted;
    let ln = |m: &BTreeMap<Arm, f64>, a: Arm| m.get(&a).map_or(0.0, |v| v.ln());
    let mut out = Vec::with_capacity(spec.n_records);
    let base_n = spec.n_records / spec.n_analysts;
    let extra = spec.n_records % spec.n_analysts;
    for a in 0..spec.n_analysts {
        let id = format!("analyst_{a:03}");
        let prof = profile(&mut rng, &id, &spec.datasets);
        let offsets: [f64; 4] = std::array::from_fn(|_| spec.analyst_sd * normal.sample(&mut rng));
        let n = base_n + usize::from(a < extra);
        let arms = blocked_arms(rng::derive_seed(spec.seed, "simulate-arms", &[a as u64]), n);
        let mut clock: i64 = 1_700_000_000_000 + a as i64 * 10_000_000;
        for (k, &arm) in arms.iter().enumerate() {
            let dataset = spec.datasets[rng.random_range(0..spec.datasets.len())].clone();
            let model = spec.models[rng.random_range(0..spec.models.len())].clone();
            let label = u8::from(rng.random_bool(0.3));
            let score = sigmoid(if label == 1 { 1.2 } else { -1.2 } + normal.sample(&mut rng));
            let err = (score - f64::from(label)).abs();
            let h = predictive_entropy(score);

            let acc_eta = spec.base_accuracy_logit + ln(&p.accuracy_or, arm) - 2.0 * (err - 0.4) + offsets[0];
            let correct = rng.random_bool(sigmoid(acc_eta));
            let decision = if (label == 1) == correct { Decision::Risk } else { Decision::NoRisk };

            let latent = ln_shift(&p.confidence_shift, arm) - 0.8 * (h - 0.5) + offsets[1] + logistic_noise(&mut rng);
            let confidence = Confidence::from_level(CONFIDENCE_CUTS.iter().filter(|&&c| latent > c).count());

            let clarity = if arm == Arm::None {
                Clarity::NotApplicable
            } else if rng.random_bool(sigmoid(0.3 + ln(&p.clarity_or, arm) + offsets[2])) {
                Clarity::Clear
            } else {
                Clarity::Confusing
            };

            let log_time = 3.0 + ln(&p.time_multiplier, arm) + 0.2 * h + offsets[3] + 0.4 * normal.sample(&mut rng);
            let t = (log_time.exp() - 1.0).max(0.0);
            let served_at = clock;
            let submitted_at = served_at + (t * 1000.0).round() as i64;
            clock = submitted_at + 5_000;

            out.push(ReviewRecord {
                v: SCHEMA_VERSION.to_string(),
                record_index: out.len() as u64,
                session_id: format!("sim-{a:03}"),
                analyst_id: id.clone(),
                profile: prof.clone(),
                dataset,
                model_kind: model,
                case_index: k,
                case_id: rng.random_range(0..100),
                arm,
                decision,
                confidence,
                clarity,
                served_at,
                submitted_at,
                view_duration_s: t,
                score,
                score_percentile: 100.0 * score,
                true_label: label,
                features: Vec::new(),
                variant_fingerprint: if arm == Arm::None { String::new() } else { format!("sim:{arm}") },
                flags: Vec::new(),
                prev_hash: String::new(),
                hash: String::new(),
            });
        }
    }
    Ok(out)
}

fn ln_shift(m: &BTreeMap<Arm, f64>, a: Arm) -> f64 {
    m.get(&a).copied().unwrap_or(0.0)
}
