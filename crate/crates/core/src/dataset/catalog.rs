//! Built-in schemas for the public risk datasets.

use super::{DatasetSpec, FeatureKind, FeatureSchema, LabelSpec};

pub fn preset_names() -> &'static [&'static str] {
    &["german_credit", "maternal_risk", "heloc", "adult"]
}

fn build(name: &str, cols: &[(&str, &[&str])], label: &str, positive: Option<&str>) -> DatasetSpec {
    let features = cols
        .iter()
        .enumerate()
        .map(|(i, (n, levels))| FeatureSchema {
            name: n.to_string(),
            kind: if levels.is_empty() {
                FeatureKind::Numeric
            } else {
                FeatureKind::Categorical
            },
            levels: levels.iter().map(|s| s.to_string()).collect(),
            index: i,
        })
        .collect();
    DatasetSpec {
        name: name.to_string(),
        features,
        label: LabelSpec {
            column: label.to_string(),
            positive: positive.map(str::to_string),
        },
        missing_sentinels: Vec::new(),
        drop_missing_fraction: 0.5,
    }
}

const NUM: &[&str] = &[];

/// Look up a preset schema by name.
pub fn preset(name: &str) -> Option<DatasetSpec> {
    match name {
        "german_credit" => Some(build(
            "german_credit",
            &[
                ("checking_status", &["lt_0_dm", "0_to_200_dm", "no_checking", "ge_200_dm"]),
                ("duration_months", NUM),
                (
                    "credit_history",
                    &["critical_account", "existing_paid", "past_delay", "no_credits", "paid_this_bank"],
                ),
                (
                    "purpose",
                    &[
                        "radio_tv",
                        "education",
                        "furniture",
                        "car_new",
                        "car_used",
                        "business",
                        "appliances",
                        "repairs",
                        "other_purpose",
                        "retraining",
                    ],
                ),
                ("credit_amount", NUM),
                ("savings", &["no_savings", "lt_100_dm", "500_to_1000_dm", "ge_1000_dm", "100_to_500_dm"]),
                (
                    "employment_since",
                    &["ge_7_years", "1_to_4_years", "4_to_7_years", "unemployed", "lt_1_year"],
                ),
                ("installment_rate", NUM),
                ("personal_status", &["male_single", "female_div_married", "male_divorced", "male_married"]),
                ("other_debtors", &["no_debtor", "guarantor", "co_applicant"]),
                ("residence_since", NUM),
                ("property", &["real_estate", "savings_insurance", "no_property", "car_other"]),
                ("age", NUM),
                ("other_installment_plans", &["no_plan", "bank", "stores"]),
                ("housing", &["own", "for_free", "rent"]),
                ("existing_credits", NUM),
                ("job", &["skilled", "unskilled_resident", "management", "unskilled_nonresident"]),
                ("num_dependents", NUM),
                ("telephone", NUM),
                ("foreign_worker", NUM),
            ],
            "risk",
            None,
        )),
        "maternal_risk" => Some(build(
            "maternal_risk",
            &[
                ("Age", NUM),
                ("SystolicBP", NUM),
                ("DiastolicBP", NUM),
                ("BS", NUM),
                ("BodyTemp", NUM),
                ("HeartRate", NUM),
            ],
            "RiskLevel",
            Some("high risk"),
        )),
        "heloc" => {
            let names = [
                "ExternalRiskEstimate",
                "MSinceOldestTradeOpen",
                "MSinceMostRecentTradeOpen",
                "AverageMInFile",
                "NumSatisfactoryTrades",
                "NumTrades60Ever2DerogPubRec",
                "NumTrades90Ever2DerogPubRec",
                "PercentTradesNeverDelq",
                "MSinceMostRecentDelq",
                "MaxDelq2PublicRecLast12M",
                "MaxDelqEver",
                "NumTotalTrades",
                "NumTradesOpeninLast12M",
                "PercentInstallTrades",
                "MSinceMostRecentInqexcl7days",
                "NumInqLast6M",
                "NumInqLast6Mexcl7days",
                "NetFractionRevolvingBurden",
                "NetFractionInstallBurden",
                "NumRevolvingTradesWBalance",
                "NumInstallTradesWBalance",
                "NumBank2NatlTradesWHighUtilization",
                "PercentTradesWBalance",
            ];
            let cols: Vec<(&str, &[&str])> = names.iter().map(|n| (*n, NUM)).collect();
            let mut spec = build("heloc", &cols, "RiskPerformance", Some("Bad"));
            spec.missing_sentinels = vec![-7.0, -8.0, -9.0];
            Some(spec)
        }
        "adult" => Some(build(
            "adult",
            &[
                ("age", NUM),
                ("workclass", &[]),
                ("education", &[]),
                ("marital-status", &[]),
                ("occupation", &[]),
                ("race", &[]),
                ("sex", &[]),
                ("capital-gain", NUM),
                ("capital-loss", NUM),
                ("hours-per-week", NUM),
            ],
            "income",
            Some(">50K"),
        ))
        .map(|mut s| {
            // levels are learned from the file in first-appearance order
            for (i, f) in s.features.iter_mut().enumerate() {
                if [1, 2, 3, 4, 5, 6].contains(&i) {
                    f.kind = FeatureKind::Categorical;
                }
            }
            s
        }),
        _ => None,
    }
}
