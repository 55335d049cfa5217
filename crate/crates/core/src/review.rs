//! Review-study vocabulary shared by the study service, the simulator and
//! the analysis pipeline. Every enum travels as a lowercase snake_case string.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::valuefunctions::VariantKind;
use crate::{rng, Error, Result};

pub const SCHEMA_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    None,
    FixedZero,
    FixedMean,
    Uniform,
    Marginal,
    JointMarginal,
    Conditional,
    Counterfactual,
    FilteredConditional,
}

impl Arm {
    pub const ALL: [Arm; 9] = [
        Arm::None,
        Arm::FixedZero,
        Arm::FixedMean,
        Arm::Uniform,
        Arm::Marginal,
        Arm::JointMarginal,
        Arm::Conditional,
        Arm::Counterfactual,
        Arm::FilteredConditional,
    ];

    pub fn variant(&self) -> Option<VariantKind> {
        match self {
            Arm::None => None,
            Arm::FixedZero => Some(VariantKind::FixedZero),
            Arm::FixedMean => Some(VariantKind::FixedMean),
            Arm::Uniform => Some(VariantKind::Uniform),
            Arm::Marginal => Some(VariantKind::Marginal),
            Arm::JointMarginal => Some(VariantKind::JointMarginal),
            Arm::Conditional => Some(VariantKind::Conditional),
            Arm::Counterfactual => Some(VariantKind::Counterfactual),
            Arm::FilteredConditional => Some(VariantKind::FilteredConditional),
        }
    }

    pub fn from_variant(v: VariantKind) -> Arm {
        Arm::ALL[1 + VariantKind::ALL.iter().position(|&k| k == v).expect("variant is listed")]
    }

    pub fn as_str(&self) -> &'static str {
        match self.variant() {
            None => "none",
            Some(v) => v.as_str(),
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown arm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Risk,
    NoRisk,
}

impl Decision {
    pub fn as_label(&self) -> u8 {
        u8::from(*self == Decision::Risk)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Weak,
    Moderate,
    Strong,
}

impl Confidence {
    pub fn level(&self) -> usize {
        match self {
            Confidence::Weak => 0,
            Confidence::Moderate => 1,
            Confidence::Strong => 2,
        }
    }

    pub fn from_level(l: usize) -> Confidence {
        match l {
            0 => Confidence::Weak,
            1 => Confidence::Moderate,
            _ => Confidence::Strong,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clarity {
    Clear,
    Confusing,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlKnowledge {
    Low,
    Moderate,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YesNo {
    Yes,
    No,
}

impl YesNo {
    pub fn is_yes(&self) -> bool {
        *self == YesNo::Yes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalystProfile {
    pub analyst_id: String,
    pub professional: bool,
    pub ml_knowledge: MlKnowledge,
    pub shapley_familiarity: YesNo,
    /// Domain knowledge per dataset name; missing entries count as `no`.
    #[serde(default)]
    pub domain_knowledge: BTreeMap<String, YesNo>,
}

impl AnalystProfile {
    pub fn knows_domain(&self, dataset: &str) -> bool {
        self.domain_knowledge.get(dataset).is_some_and(YesNo::is_yes)
    }
}

/// View durations and server timestamps disagreeing by more than this many
/// seconds flag the record.
pub const DURATION_FLAG_SECONDS: f64 = 10.0;
pub const FLAG_DURATION_MISMATCH: &str = "duration_mismatch";

/// One submitted review, as persisted and exported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub v: String,
    /// Position in the log, starting at 0.
    pub record_index: u64,
    pub session_id: String,
    pub analyst_id: String,
    pub profile: AnalystProfile,
    pub dataset: String,
    pub model_kind: String,
    /// Position of the case within the session.
    pub case_index: usize,
    /// Row of the evaluation split shown.
    pub case_id: usize,
    pub arm: Arm,
    pub decision: Decision,
    pub confidence: Confidence,
    pub clarity: Clarity,
    /// UTC milliseconds.
    pub served_at: i64,
    pub submitted_at: i64,
    /// Client-reported render-to-submit time in seconds.
    pub view_duration_s: f64,
    pub score: f64,
    pub score_percentile: f64,
    pub true_label: u8,
    /// Raw feature values as displayed.
    pub features: Vec<String>,
    /// Variant fingerprint of the explainer shown; empty for the control arm.
    pub variant_fingerprint: String,
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(default)]
    pub prev_hash: String,
    #[serde(default)]
    pub hash: String,
}

impl ReviewRecord {
    pub fn validate(&self) -> Result<()> {
        if self.submitted_at < self.served_at {
            return Err(Error::InvalidParameter("submitted_at precedes served_at".into()));
        }
        if !(self.view_duration_s >= 0.0) || !self.view_duration_s.is_finite() {
            return Err(Error::InvalidParameter("view duration must be a finite value >= 0".into()));
        }
        check_clarity(self.arm, self.clarity)
    }

    pub fn is_correct(&self) -> bool {
        self.decision.as_label() == self.true_label
    }
}

/// `not_applicable` exactly when no explanation was shown.
pub fn check_clarity(arm: Arm, clarity: Clarity) -> Result<()> {
    match (arm == Arm::None, clarity == Clarity::NotApplicable) {
        (true, false) => Err(Error::InvalidParameter("clarity must be not_applicable when no explanation is shown".into())),
        (false, true) => Err(Error::InvalidParameter("clarity must be clear or confusing when an explanation is shown".into())),
        _ => Ok(()),
    }
}

/// Blocked randomization: each consecutive block of 9 is a permutation of
/// all arms; a trailing partial block takes a prefix of a permutation.
pub fn blocked_arms(seed: u64, n_cases: usize) -> Vec<Arm> {
    let mut out = Vec::with_capacity(n_cases);
    let mut block = 0u64;
    while out.len() < n_cases {
        let mut arms = Arm::ALL;
        arms.shuffle(&mut rng::stream(seed, "arm-block", &[block]));
        out.extend(arms.into_iter().take(n_cases - out.len()));
        block += 1;
    }
    out
}

/// Parse newline-delimited JSON records, skipping blank lines.
pub fn parse_ndjson(text: &str) -> Result<Vec<ReviewRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Row {
                row: i,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_log(path: impl AsRef<std::path::Path>) -> Result<Vec<ReviewRecord>> {
    let path = path.as_ref();
    parse_ndjson(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arms_serialize_snake_case() {
        assert_eq!(serde_json::to_string(&Arm::FilteredConditional).unwrap(), "\"filtered_conditional\"");
        assert_eq!(serde_json::to_string(&Decision::NoRisk).unwrap(), "\"no_risk\"");
        assert_eq!(serde_json::to_string(&Clarity::NotApplicable).unwrap(), "\"not_applicable\"");
        for a in Arm::ALL {
            assert_eq!(a.as_str().parse::<Arm>().unwrap(), a);
            if let Some(v) = a.variant() {
                assert_eq!(Arm::from_variant(v), a);
            }
        }
    }

    #[test]
    fn blocks_are_permutations() {
        let arms = blocked_arms(4, 27);
        for block in arms.chunks(9) {
            let mut b = block.to_vec();
            b.sort();
            assert_eq!(b, Arm::ALL.to_vec());
        }
        assert_eq!(blocked_arms(4, 27), arms);
        let eighteen = blocked_arms(1, 18);
        for a in Arm::ALL {
            assert_eq!(eighteen.iter().filter(|&&x| x == a).count(), 2);
        }
    }

    #[test]
    fn clarity_rule() {
        assert!(check_clarity(Arm::None, Clarity::NotApplicable).is_ok());
        assert!(check_clarity(Arm::None, Clarity::Clear).is_err());
        assert!(check_clarity(Arm::Marginal, Clarity::NotApplicable).is_err());
    }
}
