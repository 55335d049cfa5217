use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::models::sigmoid;
use crate::review::{Clarity, Confidence};
use crate::rng;
use crate::simulate::{simulate_analysts, PlantedEffects, SimulationSpec};

fn sim(n: usize, seed: u64, planted: PlantedEffects) -> Vec<ReviewRecord> {
    simulate_analysts(&SimulationSpec { n_records: n, seed, planted, ..Default::default() }).unwrap()
}

fn raw_design(x: DMatrix<f64>, y: Vec<f64>, names: &[&str], outcome: Outcome) -> DesignMatrix {
    DesignMatrix {
        outcome,
        rows: (0..y.len()).collect(),
        response: y,
        columns: names.iter().map(|s| s.to_string()).collect(),
        x,
        dropped: Vec::new(),
        has_intercept: names.contains(&INTERCEPT),
    }
}

#[test]
fn accuracy_design_has_eight_arm_dummies() {
    let logs = sim(900, 1, PlantedEffects::default());
    let d = build_design_matrix(&logs, Outcome::Accuracy, &DesignSpec::default()).unwrap();
    let arms: Vec<&String> = d.columns.iter().filter(|c| c.starts_with("arm[")).collect();
    assert_eq!(arms.len(), 8);
    assert!(!d.columns.contains(&"arm[none]".to_string()));
    assert_eq!(d.columns[0], INTERCEPT);
    assert_eq!(d.n(), 900);
    for j in 1..d.x.ncols() {
        let c = d.x.column(j);
        assert!(c.iter().any(|v| *v != c[0]), "constant column {}", d.columns[j]);
    }
    let again = build_design_matrix(&logs, Outcome::Accuracy, &DesignSpec::default()).unwrap();
    assert_eq!(d, again);
}

#[test]
fn clarity_drops_control_rows_and_uses_contrasts() {
    let logs = sim(900, 2, PlantedEffects::default());
    let d = build_design_matrix(&logs, Outcome::Clarity, &DesignSpec::default()).unwrap();
    assert_eq!(d.n(), logs.iter().filter(|r| r.arm != Arm::None).count());
    assert!(d.rows.iter().all(|&i| logs[i].arm != Arm::None));
    let arm_cols: Vec<usize> = (0..d.columns.len()).filter(|&j| d.columns[j].starts_with("arm[")).collect();
    assert_eq!(arm_cols.len(), 7);
    for &j in &arm_cols {
        assert!(d.x.column(j).sum().abs() < 0.2 * d.n() as f64);
    }
    let last = d.rows.iter().position(|&i| logs[i].arm == Arm::FilteredConditional).unwrap();
    assert!(arm_cols.iter().all(|&j| d.x[(last, j)] == -1.0));
}

#[test]
fn exposure_is_log_one_plus_index() {
    let logs = sim(200, 3, PlantedEffects::default());
    let e = exposure(&logs);
    let first = &logs[0].analyst_id;
    let mine: Vec<usize> = (0..logs.len()).filter(|&i| &logs[i].analyst_id == first).collect();
    assert!((e[mine[4]] - 6f64.ln()).abs() < 1e-12);
    assert!((e[mine[4]] - 1.792).abs() < 1e-3);
    assert!((e[mine[0]] - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn single_class_names_outcome() {
    let mut logs = sim(100, 4, PlantedEffects::default());
    for r in logs.iter_mut() {
        r.confidence = Confidence::Strong;
        if r.arm != Arm::None {
            r.clarity = Clarity::Clear;
        }
    }
    let err = build_design_matrix(&logs, Outcome::Confidence, &DesignSpec::default()).unwrap_err();
    assert!(err.to_string().contains("confidence"));
    let err = build_design_matrix(&logs, Outcome::Clarity, &DesignSpec::default()).unwrap_err();
    assert!(err.to_string().contains("clarity"));
    assert!(build_design_matrix(&[], Outcome::Accuracy, &DesignSpec::default()).is_err());
}

#[test]
fn aliased_controls_are_dropped_and_listed() {
    let mut logs = sim(400, 5, PlantedEffects::default());
    for r in logs.iter_mut() {
        r.profile.professional = r.profile.shapley_familiarity.is_yes();
    }
    let d = build_design_matrix(&logs, Outcome::Accuracy, &DesignSpec::default()).unwrap();
    assert!(d.dropped.iter().any(|c| c == "shapley[yes]" || c.starts_with("analyst[")));
    assert!(independent_rank(&d.x) == d.x.ncols());
}

fn independent_rank(x: &DMatrix<f64>) -> usize {
    x.clone().svd(false, false).singular_values.iter().filter(|s| **s > 1e-8).count()
}

/// Score equations of the logistic likelihood vanish at the MLE.
#[test]
fn logistic_solves_score_equations() {
    let logs = sim(1500, 6, PlantedEffects::default());
    let d = build_design_matrix(&logs, Outcome::Accuracy, &DesignSpec::default()).unwrap();
    let fit = fit_logistic_mle(&d).unwrap();
    assert!(fit.converged && fit.flags.is_empty());
    let beta = DVector::from_column_slice(&fit.coef);
    let eta = &d.x * beta;
    let resid = DVector::from_iterator(d.n(), (0..d.n()).map(|i| d.response[i] - sigmoid(eta[i])));
    assert!((d.x.transpose() * resid).amax() < 1e-6);
    assert!(fit.trace.windows(2).all(|w| w[1] >= w[0]));
}

fn ordinal_fd_grad(x: &DMatrix<f64>, y: &[f64], par: &[f64]) -> Vec<f64> {
    (0..par.len())
        .map(|k| {
            let h = 1e-5;
            let mut a = DVector::from_column_slice(par);
            let mut b = a.clone();
            a[k] += h;
            b[k] -= h;
            (ordinal_loglik(x, y, &a) - ordinal_loglik(x, y, &b)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn ordinal_stationary_with_ordered_thresholds() {
    let logs = sim(1500, 7, PlantedEffects::default());
    let spec = DesignSpec { analyst_dummies: false, ..Default::default() };
    let d = build_design_matrix(&logs, Outcome::Confidence, &spec).unwrap();
    assert!(!d.has_intercept);
    let fit = fit_ordinal_po(&d).unwrap();
    assert!(fit.converged);
    assert!(fit.coef[1] > fit.coef[0]);
    assert!(fit.trace.windows(2).all(|w| w[1] >= w[0]));
    let g = ordinal_fd_grad(&d.x, &d.response, &fit.coef);
    assert!(g.iter().all(|v| v.abs() < 1e-3), "{g:?}");
    // Inverse covariance against a finite-difference Hessian.
    let info = fit.cov_matrix().try_inverse().unwrap();
    let h = 1e-4;
    for k in [0, 1, 2, fit.coef.len() - 1] {
        let mut up = fit.coef.clone();
        up[k] += h;
        let mut dn = fit.coef.clone();
        dn[k] -= h;
        let (gu, gd) = (ordinal_fd_grad(&d.x, &d.response, &up), ordinal_fd_grad(&d.x, &d.response, &dn));
        for m in 0..fit.coef.len() {
            let fd = -(gu[m] - gd[m]) / (2.0 * h);
            assert!((fd - info[(k, m)]).abs() < 1e-2 * (1.0 + info[(k, m)].abs()), "{k},{m}: {fd} vs {}", info[(k, m)]);
        }
    }
}

#[test]
fn ordinal_single_level_errors() {
    let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
    let d = raw_design(x, vec![1.0; 10], &["z"], Outcome::Confidence);
    assert!(fit_ordinal_po(&d).is_err());
}

#[test]
fn separable_toy_takes_ridge_path() {
    let x = DMatrix::from_fn(20, 2, |i, j| if j == 0 { 1.0 } else { i as f64 - 9.5 });
    let y: Vec<f64> = (0..20).map(|i| f64::from(u8::from(i >= 10))).collect();
    let d = raw_design(x, y, &[INTERCEPT, "z"], Outcome::Accuracy);
    let fit = fit_logistic_mle(&d).unwrap();
    assert!(fit.flags.contains(&FLAG_RIDGE_REFIT.to_string()));
    assert!(fit.coef.iter().all(|v| v.is_finite()));
    assert!(fit.coef[1] > 0.0);
}

#[test]
fn reference_switch_leaves_arm_effects() {
    let logs = sim(2000, 8, PlantedEffects::default());
    let a = DesignSpec::default();
    let b = DesignSpec { dataset_reference: Some("maternal_risk".into()), ..Default::default() };
    for outcome in [Outcome::Accuracy, Outcome::Confidence, Outcome::Clarity] {
        let fit = |s: &DesignSpec| {
            let d = build_design_matrix(&logs, outcome, s).unwrap();
            if outcome == Outcome::Confidence {
                fit_ordinal_po(&d).unwrap()
            } else {
                fit_logistic_mle(&d).unwrap()
            }
        };
        let (fa, fb) = (fit(&a), fit(&b));
        assert!(fa.names.contains(&"dataset[maternal_risk]".to_string()));
        assert!(fb.names.contains(&"dataset[adult]".to_string()));
        for arm in &Arm::ALL[1..] {
            let n = arm_column(*arm);
            if let (Some(i), Some(j)) = (fa.index(&n), fb.index(&n)) {
                assert!((fa.coef[i] - fb.coef[j]).abs() < 1e-8, "{outcome:?} {n}");
                assert!((fa.se(i) - fb.se(j)).abs() < 1e-8);
            }
        }
    }
}

fn planted() -> PlantedEffects {
    let mut p = PlantedEffects::default();
    p.accuracy_or.insert(Arm::Counterfactual, 1.5);
    p.confidence_shift.insert(Arm::Counterfactual, 1.5f64.ln());
    p.clarity_or.insert(Arm::Marginal, 2.0);
    p.time_multiplier.insert(Arm::Conditional, 1.3);
    p
}

#[test]
fn planted_effects_recovered() {
    let logs = sim(4000, 9, planted());
    let cfg = AnalysisConfig { quantile: QuantileConfig { boot_reps: 20, ..Default::default() }, ..Default::default() };
    let rep = analyze_logs(&logs, &cfg).unwrap();
    let acc = rep.table.get("arm[counterfactual]", "accuracy").unwrap();
    assert!(acc.effect > 1.2 && acc.effect < 1.9, "{acc:?}");
    let conf = rep.table.get("arm[counterfactual]", "confidence").unwrap();
    assert!((conf.log_effect - 1.5f64.ln()).abs() < 0.3, "{conf:?}");
    let t = rep.table.get("arm[conditional]", "time_p50").unwrap();
    assert!((t.effect - 1.3).abs() < 0.1, "{t:?}");
    let clear = rep.table.get("arm[marginal]", "clarity").unwrap();
    assert!(clear.effect > 1.3, "{clear:?}");
    // The implied last contrast agrees with the fitted ones summing to zero.
    let sum: f64 = Arm::ALL[1..].iter().map(|&a| rep.table.get(&arm_column(a), "clarity").unwrap().log_effect).sum();
    assert!(sum.abs() < 1e-9);
    let crossing = rep.crossing.unwrap();
    assert!(crossing.fraction_ordered >= 0.99, "{crossing:?}");
    for row in &rep.table.rows {
        for e in row.cells.values() {
            assert!(e.effect > 0.0 && e.ci_lo <= e.effect && e.effect <= e.ci_hi);
        }
    }
    let csv = rep.table.to_csv();
    assert!(csv.starts_with("predictor,time_p2.5,"));
    assert_eq!(csv.lines().count(), rep.table.rows.len() + 1);
}

fn location_shift(n: usize, seed: u64, symmetric: bool) -> DesignMatrix {
    let mut r = rng::stream(seed, "test-quantile", &[]);
    let normal = Normal::new(0.0, 0.5).unwrap();
    let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { r.random_range(-1.0..1.0) });
    let y = (0..n)
        .map(|i| {
            let e = if symmetric { normal.sample(&mut r) } else { -Distribution::<f64>::sample(&normal, &mut r).abs().ln() };
            2.0 + 0.8 * x[(i, 1)] - 0.3 * x[(i, 2)] + e
        })
        .collect();
    raw_design(x, y, &[INTERCEPT, "a", "b"], Outcome::Time)
}

#[test]
fn median_matches_ols_on_symmetric_noise() {
    let d = location_shift(3000, 1, true);
    let fit = fit_quantile_logtime(&d, 0.5, &QuantileConfig { boot_reps: 0, ..Default::default() }).unwrap();
    let (ols, _) = crate::linalg::solve_spd(&d.x.tr_mul(&d.x), &d.x.tr_mul(&DVector::from_column_slice(&d.response)), 0.0).unwrap();
    for j in 1..3 {
        assert!((fit.coef[j] - ols[j]).abs() < 0.05 * ols[j].abs(), "{} vs {}", fit.coef[j], ols[j]);
    }
}

/// Independent oracle: the pinball objective at the fit is within a hair
/// of a fine coordinate grid around it.
#[test]
fn quantile_fit_is_near_minimal() {
    let d = location_shift(1500, 2, false);
    for q in TIME_QUANTILES {
        let fit = fit_quantile_logtime(&d, q, &QuantileConfig { boot_reps: 0, ..Default::default() }).unwrap();
        let obj = |b: &[f64]| -> f64 {
            (0..d.n()).map(|i| pinball(d.response[i] - (0..3).map(|j| d.x[(i, j)] * b[j]).sum::<f64>(), q)).sum::<f64>() / d.n() as f64
        };
        let base = obj(&fit.coef);
        for j in 0..3 {
            for step in [-0.02, -0.005, 0.005, 0.02] {
                let mut b = fit.coef.clone();
                b[j] += step;
                assert!(obj(&b) >= base - 2e-4, "q {q} coord {j} step {step}");
            }
        }
    }
}

#[test]
fn location_shift_gives_equal_slopes() {
    let d = location_shift(2000, 3, false);
    let cfg = QuantileConfig { boot_reps: 60, ..Default::default() };
    let fits: Vec<QuantileFit> = TIME_QUANTILES.iter().map(|&q| fit_quantile_logtime(&d, q, &cfg).unwrap()).collect();
    for j in 1..3 {
        let mid = &fits[1];
        for f in [&fits[0], &fits[2]] {
            let diff = f.coef[j] - mid.coef[j];
            let se = (f.se[j].powi(2) + mid.se[j].powi(2)).sqrt();
            assert!(diff.abs() < Z95 * se + 1e-9, "q {} coord {j}: {diff} vs {se}", f.q);
        }
    }
    assert!(quantile_crossing(&d, &fits).fraction_ordered >= 0.99);
}

#[test]
fn constant_times_give_zero_slopes() {
    let mut d = location_shift(200, 4, true);
    d.response = vec![1.5; 200];
    let fit = fit_quantile_logtime(&d, 0.975, &QuantileConfig::default()).unwrap();
    assert!((fit.coef[0] - 1.5).abs() < 1e-9);
    assert!(fit.coef[1].abs() < 1e-9 && fit.coef[2].abs() < 1e-9);
    assert!(fit.se.iter().all(|s| *s == 0.0));
}

fn metrics_for(logs: &[ReviewRecord], f: impl Fn(&ReviewRecord, &mut rand_chacha::ChaCha8Rng) -> f64) -> Vec<CaseMetrics> {
    let mut r = rng::stream(0, "test-metrics", &[]);
    let mut seen = BTreeMap::new();
    for rec in logs.iter().filter(|r| r.arm != Arm::None) {
        let key = (rec.dataset.clone(), rec.model_kind.clone(), rec.case_id, rec.arm);
        let v = f(rec, &mut r);
        seen.entry(key).or_insert(v);
    }
    seen.into_iter()
        .map(|((dataset, model_kind, case_id, arm), v)| CaseMetrics { dataset, model_kind, case_id, arm, values: [("sparsity".to_string(), v)].into() })
        .collect()
}

#[test]
fn alignment_null_and_errors() {
    let logs = sim(3000, 11, PlantedEffects::default());
    let metrics = metrics_for(&logs, |_, r| r.random_range(0.0..1.0));
    let spec = AlignmentRegressionSpec { response: Outcome::Confidence, metrics: vec!["sparsity".into()] };
    let res = alignment_regression(&logs, &metrics, &spec, &DesignSpec::default()).unwrap();
    let e = &res.effects[0];
    assert!(e.effect > 0.8 && e.effect < 1.25, "{e:?}");
    assert!(res.n_used > 0);
    let empty = AlignmentRegressionSpec { response: Outcome::Clarity, metrics: vec![] };
    assert!(alignment_regression(&logs, &metrics, &empty, &DesignSpec::default()).is_err());
    assert!(res.to_csv().starts_with("response,metric,"));
}

#[test]
fn alignment_recovers_negative_sparsity_effect() {
    // Sparser explanations planted with lower confidence: shift the latent
    // by editing the responses in proportion to a synthetic metric.
    let mut logs = sim(3000, 12, PlantedEffects::default());
    let mut r = rng::stream(1, "test-align", &[]);
    let mut metric = BTreeMap::new();
    for rec in logs.iter_mut().filter(|r| r.arm != Arm::None) {
        let key = (rec.dataset.clone(), rec.model_kind.clone(), rec.case_id, rec.arm);
        let m: f64 = *metric.entry(key).or_insert_with(|| r.random_range(0.0..1.0));
        let u: f64 = r.random_range(1e-9..1.0 - 1e-9);
        let latent = -2.0 * (m - 0.5) + (u / (1.0 - u)).ln();
        rec.confidence = Confidence::from_level([-0.8, 1.0].iter().filter(|&&c| latent > c).count());
    }
    let metrics: Vec<CaseMetrics> = metric
        .into_iter()
        .map(|((dataset, model_kind, case_id, arm), v)| CaseMetrics { dataset, model_kind, case_id, arm, values: [("sparsity".to_string(), v)].into() })
        .collect();
    let spec = AlignmentRegressionSpec { response: Outcome::Confidence, metrics: vec!["sparsity".into()] };
    let res = alignment_regression(&logs, &metrics, &spec, &DesignSpec::default()).unwrap();
    assert!(res.effects[0].ci_hi < 1.0, "{:?}", res.effects[0]);
}
