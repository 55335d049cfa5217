//! Deterministic reason-code sentences for displayed features.

use shapval_core::dataset::{FeatureSchema, quantile_sorted};

/// Train percentiles of one numeric feature on the raw scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub p10: f64,
    pub p90: f64,
}

impl Bounds {
    pub fn from_values(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Bounds {
            p10: quantile_sorted(&s, 0.10),
            p90: quantile_sorted(&s, 0.90),
        }
    }
}

/// `age_years` -> `Age years`.
pub fn display_name(name: &str) -> String {
    let spaced = name.replace('_', " ");
    let mut chars = spaced.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Shortest round-trip decimal form; integral values print without a fraction.
pub fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

/// Raw display value of feature `f` for an encoded value `v`.
pub fn display_value(f: &FeatureSchema, v: f64) -> String {
    if f.is_categorical() {
        f.levels.get(v as usize).cloned().unwrap_or_else(|| format_value(v))
    } else {
        format_value(v)
    }
}

/// `"<Feature> value of <raw> is <high|typical|low>[, <raising|lowering> the risk score]"`;
/// categorical features read `"<Feature> is <level>"`. `bounds` is `None`
/// exactly for categorical features.
pub fn reason_code(f: &FeatureSchema, raw: f64, phi: f64, bounds: Option<&Bounds>) -> String {
    let name = display_name(&f.name);
    let mut s = match bounds {
        Some(b) if !f.is_categorical() => {
            let level = if raw > b.p90 {
                "high"
            } else if raw < b.p10 {
                "low"
            } else {
                "typical"
            };
            format!("{name} value of {} is {level}", format_value(raw))
        }
        _ => format!("{name} is {}", display_value(f, raw)),
    };
    if phi > 0.0 {
        s.push_str(", raising the risk score");
    } else if phi < 0.0 {
        s.push_str(", lowering the risk score");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn age_example() {
        let f = FeatureSchema::numeric("age", 0);
        let values: Vec<f64> = (18..=75).map(f64::from).collect();
        let b = Bounds::from_values(&values);
        assert_eq!(reason_code(&f, 70.0, 0.2, Some(&b)), "Age value of 70 is high, raising the risk score");
        assert_eq!(reason_code(&f, 19.0, -0.1, Some(&b)), "Age value of 19 is low, lowering the risk score");
        assert_eq!(reason_code(&f, 40.0, 0.0, Some(&b)), "Age value of 40 is typical");
    }

    #[test]
    fn categorical_uses_level() {
        let f = FeatureSchema::categorical("housing", 1, &["own", "rent", "for_free"]);
        assert_eq!(reason_code(&f, 1.0, 0.3, None), "Housing is rent, raising the risk score");
        assert_eq!(display_name("credit_amount"), "Credit amount");
        assert_eq!(format_value(2.5), "2.5");
        assert_eq!(format_value(1169.0), "1169");
    }
}
