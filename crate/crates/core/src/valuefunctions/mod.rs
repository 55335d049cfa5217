//! Background distributions and the coalition value function
//! `v_x(S) = E[f(x_S, X_rest)]`.
//!
//! A [`BackgroundSet`] is built once per (instance, spec) and then shared by
//! every coalition evaluated for that instance.

mod background;
mod counterfactual;

pub use background::{build_background, impute, value, BackgroundSet, KernelState};
pub use counterfactual::{counterfactual_target, generate_counterfactual, CounterfactualSearch};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::models::Predictor;
use crate::{Error, Result};

/// Operational decision threshold on the risk score.
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const MAX_FEATURES: usize = 64;

/// Set of present features as a bitmask over `d <= 64` features.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coalition {
    mask: u64,
    d: u8,
}

impl Coalition {
    pub fn new(mask: u64, d: usize) -> Self {
        assert!(d <= MAX_FEATURES, "coalitions support at most 64 features");
        let mask = if d == 64 { mask } else { mask & ((1u64 << d) - 1) };
        Coalition { mask, d: d as u8 }
    }

    pub fn empty(d: usize) -> Self {
        Coalition::new(0, d)
    }

    pub fn full(d: usize) -> Self {
        Coalition::new(u64::MAX, d)
    }

    pub fn from_indices(d: usize, indices: &[usize]) -> Self {
        Coalition::new(indices.iter().fold(0u64, |m, &i| m | (1 << i)), d)
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn dim(&self) -> usize {
        usize::from(self.d)
    }

    pub fn size(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn contains(&self, i: usize) -> bool {
        self.mask >> i & 1 == 1
    }

    pub fn with(&self, i: usize) -> Self {
        Coalition::new(self.mask | (1 << i), self.dim())
    }

    pub fn complement(&self) -> Self {
        Coalition::new(!self.mask, self.dim())
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }

    pub fn is_full(&self) -> bool {
        self.size() == self.dim()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim()).filter(|&i| self.contains(i))
    }
}

impl fmt::Debug for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits: String = (0..self.dim()).map(|i| if self.contains(i) { '1' } else { '0' }).collect();
        write!(f, "Coalition({bits})")
    }
}

/// The eight background semantics, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    FixedZero,
    FixedMean,
    Uniform,
    Marginal,
    JointMarginal,
    Conditional,
    Counterfactual,
    FilteredConditional,
}

impl VariantKind {
    pub const ALL: [VariantKind; 8] = [
        VariantKind::FixedZero,
        VariantKind::FixedMean,
        VariantKind::Uniform,
        VariantKind::Marginal,
        VariantKind::JointMarginal,
        VariantKind::Conditional,
        VariantKind::Counterfactual,
        VariantKind::FilteredConditional,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VariantKind::FixedZero => "fixed_zero",
            VariantKind::FixedMean => "fixed_mean",
            VariantKind::Uniform => "uniform",
            VariantKind::Marginal => "marginal",
            VariantKind::JointMarginal => "joint_marginal",
            VariantKind::Conditional => "conditional",
            VariantKind::Counterfactual => "counterfactual",
            VariantKind::FilteredConditional => "filtered_conditional",
        }
    }

    /// Variants whose value function is a deterministic single-row baseline.
    pub fn is_fixed(&self) -> bool {
        matches!(self, VariantKind::FixedZero | VariantKind::FixedMean)
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for VariantKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown variant {s:?}")))
    }
}

/// Closed score interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ScoreInterval {
    pub fn contains(&self, s: f64) -> bool {
        s >= self.lo && s <= self.hi
    }

    /// Scores on the other side of `threshold` from `fx`.
    pub fn opposite_side(fx: f64, threshold: f64) -> Self {
        if fx >= threshold {
            ScoreInterval { lo: 0.0, hi: threshold - f64::EPSILON }
        } else {
            ScoreInterval { lo: threshold, hi: 1.0 }
        }
    }
}

impl fmt::Display for ScoreInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterfactualParams {
    /// Target score; default is `threshold -/+ margin` on the other side of f(x).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Model evaluations per counterfactual.
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Seed rows are drawn from this many nearest target-side training rows.
    #[serde(default = "default_neighbors")]
    pub neighbors: usize,
}

fn default_margin() -> f64 {
    0.1
}
fn default_tolerance() -> f64 {
    0.05
}
fn default_budget() -> usize {
    2000
}
fn default_neighbors() -> usize {
    10
}

impl Default for CounterfactualParams {
    fn default() -> Self {
        CounterfactualParams {
            target: None,
            margin: default_margin(),
            tolerance: default_tolerance(),
            budget: default_budget(),
            neighbors: default_neighbors(),
        }
    }
}

/// Variant plus exactly the parameters that variant uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum Variant {
    FixedZero,
    FixedMean {
        /// Explicit baseline x′; defaults to training means and modes.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        baseline: Option<Vec<f64>>,
    },
    Uniform {
        /// Per-feature (min, max); defaults to the training hyperbox.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bounds: Option<Vec<(f64, f64)>>,
    },
    Marginal,
    JointMarginal,
    Conditional {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bandwidth: Option<f64>,
        /// Size of the weighted training pool; defaults to the background size.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pool: Option<usize>,
    },
    Counterfactual(CounterfactualParams),
    FilteredConditional {
        /// Accepted score set; defaults to the opposite side of the threshold.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        filter: Option<ScoreInterval>,
    },
}

impl Variant {
    pub fn kind(&self) -> VariantKind {
        match self {
            Variant::FixedZero => VariantKind::FixedZero,
            Variant::FixedMean { .. } => VariantKind::FixedMean,
            Variant::Uniform { .. } => VariantKind::Uniform,
            Variant::Marginal => VariantKind::Marginal,
            Variant::JointMarginal => VariantKind::JointMarginal,
            Variant::Conditional { .. } => VariantKind::Conditional,
            Variant::Counterfactual(_) => VariantKind::Counterfactual,
            Variant::FilteredConditional { .. } => VariantKind::FilteredConditional,
        }
    }

    pub fn parameter_names(&self) -> &'static [&'static str] {
        match self.kind() {
            VariantKind::FixedZero | VariantKind::Marginal | VariantKind::JointMarginal => &[],
            VariantKind::FixedMean => &["baseline"],
            VariantKind::Uniform => &["bounds"],
            VariantKind::Conditional => &["bandwidth", "pool"],
            VariantKind::Counterfactual => &["target", "margin", "tolerance", "budget", "neighbors"],
            VariantKind::FilteredConditional => &["filter"],
        }
    }

    /// Default parameterization of a variant.
    pub fn default_for(kind: VariantKind) -> Variant {
        match kind {
            VariantKind::FixedZero => Variant::FixedZero,
            VariantKind::FixedMean => Variant::FixedMean { baseline: None },
            VariantKind::Uniform => Variant::Uniform { bounds: None },
            VariantKind::Marginal => Variant::Marginal,
            VariantKind::JointMarginal => Variant::JointMarginal,
            VariantKind::Conditional => Variant::Conditional { bandwidth: None, pool: None },
            VariantKind::Counterfactual => Variant::Counterfactual(CounterfactualParams::default()),
            VariantKind::FilteredConditional => Variant::FilteredConditional { filter: None },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Map<String, serde_json::Value>")]
pub struct ValueFunctionSpec {
    #[serde(flatten)]
    pub variant: Variant,
    pub background_size: usize,
    pub threshold: f64,
    pub seed: u64,
}

fn default_background_size() -> usize {
    100
}

impl TryFrom<serde_json::Map<String, serde_json::Value>> for ValueFunctionSpec {
    type Error = String;

    /// Common keys are taken here; the remainder must match the variant's
    /// own parameters exactly.
    fn try_from(mut map: serde_json::Map<String, serde_json::Value>) -> std::result::Result<Self, String> {
        fn take<T: serde::de::DeserializeOwned>(
            map: &mut serde_json::Map<String, serde_json::Value>,
            key: &str,
            default: T,
        ) -> std::result::Result<T, String> {
            match map.remove(key) {
                Some(v) => serde_json::from_value(v).map_err(|e| format!("{key}: {e}")),
                None => Ok(default),
            }
        }
        let background_size = take(&mut map, "background_size", default_background_size())?;
        let threshold = take(&mut map, "threshold", DEFAULT_THRESHOLD)?;
        let seed = take(&mut map, "seed", 0u64)?;
        let keys: Vec<String> = map.keys().filter(|k| *k != "variant").cloned().collect();
        let variant: Variant = serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| e.to_string())?;
        let allowed = variant.parameter_names();
        if let Some(k) = keys.iter().find(|k| !allowed.contains(&k.as_str())) {
            return Err(format!("parameter {k:?} does not apply to variant {}", variant.kind()));
        }
        Ok(ValueFunctionSpec {
            variant,
            background_size,
            threshold,
            seed,
        })
    }
}

impl ValueFunctionSpec {
    pub fn new(variant: Variant, seed: u64) -> Self {
        ValueFunctionSpec {
            variant,
            background_size: default_background_size(),
            threshold: DEFAULT_THRESHOLD,
            seed,
        }
    }

    pub fn default_for(kind: VariantKind, seed: u64) -> Self {
        ValueFunctionSpec::new(Variant::default_for(kind), seed)
    }

    pub fn kind(&self) -> VariantKind {
        self.variant.kind()
    }

    pub fn with_background_size(mut self, n: usize) -> Self {
        self.background_size = n;
        self
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.background_size == 0 {
            return Err(Error::InvalidParameter("background_size must be >= 1".into()));
        }
        if d > MAX_FEATURES {
            return Err(Error::InvalidParameter(format!("at most {MAX_FEATURES} features are supported, got {d}")));
        }
        match &self.variant {
            Variant::FixedMean { baseline: Some(b) } if b.len() != d => {
                return Err(Error::Dimension { expected: d, got: b.len() });
            }
            Variant::Uniform { bounds: Some(b) } => {
                if b.len() != d {
                    return Err(Error::Dimension { expected: d, got: b.len() });
                }
                if b.iter().any(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
                    return Err(Error::InvalidParameter("uniform bounds must be finite with lo <= hi".into()));
                }
            }
            Variant::Conditional { bandwidth: Some(h), .. } if !(*h >= 0.0) => {
                return Err(Error::InvalidParameter("bandwidth must be >= 0".into()));
            }
            Variant::Conditional { pool: Some(0), .. } => {
                return Err(Error::InvalidParameter("conditional pool must be >= 1".into()));
            }
            Variant::Counterfactual(p) => {
                if p.budget == 0 {
                    return Err(Error::InvalidParameter("counterfactual budget must be >= 1".into()));
                }
                if !(p.tolerance > 0.0) || p.neighbors == 0 {
                    return Err(Error::InvalidParameter("counterfactual tolerance and neighbors must be positive".into()));
                }
            }
            Variant::FilteredConditional { filter: Some(f) } if !(f.lo <= f.hi) => {
                return Err(Error::InvalidParameter(format!("empty filter {f}")));
            }
            _ => {}
        }
        Ok(())
    }

    /// Stable short hash of the spec, used to bind checkpoints and payloads.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        format!("{:016x}", crate::rng::derive_seed(0, &json, &[]))
    }
}

/// A cooperative game over `dim()` players.
pub trait CoalitionGame {
    fn dim(&self) -> usize;
    fn value(&self, s: &Coalition) -> f64;
}

/// `v_x(S)` for one instance against a prebuilt background.
pub struct InstanceGame<'a> {
    pub x: &'a [f64],
    pub model: &'a dyn Predictor,
    pub background: &'a BackgroundSet,
}

impl<'a> InstanceGame<'a> {
    pub fn new(x: &'a [f64], model: &'a dyn Predictor, background: &'a BackgroundSet) -> Self {
        InstanceGame { x, model, background }
    }
}

impl CoalitionGame for InstanceGame<'_> {
    fn dim(&self) -> usize {
        self.x.len()
    }

    fn value(&self, s: &Coalition) -> f64 {
        value(self.x, s, self.model, self.background)
    }
}

/// A game given by an explicit function of the mask; used by tests and toys.
pub struct FnGame<F> {
    d: usize,
    f: F,
}

impl<F: Fn(&Coalition) -> f64> FnGame<F> {
    pub fn new(d: usize, f: F) -> Self {
        FnGame { d, f }
    }
}

impl<F: Fn(&Coalition) -> f64> CoalitionGame for FnGame<F> {
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, s: &Coalition) -> f64 {
        (self.f)(s)
    }
}
