//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Failures are reported without failing the process unless
//! `SHAPVAL_ACCEPTANCE_STRICT=1` is set.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};

use shapval_core::amortizer::{train_amortizer, TrainConfig};
use shapval_core::analysis::{arm_column, build_design_matrix, fit_logistic_mle, fit_ordinal_po, glm_effect, DesignSpec, Outcome};
use shapval_core::dataset::{load_csv, preset, Dataset, FeatureSchema};
use shapval_core::metrics::{
    aggregate_report, attribution_error, deletion_auc_from_path, evaluate_pair, recall_at_k, sparsity_ratio, spearman_agreement, EvalSettings, Explainer,
    InstanceMetrics, Metric, PairContext, PairKey, PerturbationSpec, Perturber,
};
use shapval_core::models::{sigmoid, FnPredictor, Model, ModelKind, Predictor};
use shapval_core::oracle::{exact_shapley, kernelshap_estimate, Budget};
use shapval_core::pipeline::{prepare, train_model, ModelConfigs, Prepared};
use shapval_core::review::{parse_ndjson, Arm, SCHEMA_VERSION};
use shapval_core::rng;
use shapval_core::simulate::{simulate_analysts, PlantedEffects, SimulationSpec};
use shapval_core::valuefunctions::{build_background, value, Coalition, ValueFunctionSpec, Variant, VariantKind};
use shapval_study::bundle::train_bundle;
use shapval_study::client::{Client, HttpResponse};
use shapval_study::server::spawn;
use shapval_study::store::{verify_chain, ReviewLog, REVIEWS_FILE};
use shapval_study::{CaseBundle, Study, StudyConfig};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

struct German {
    raw: Dataset,
    prepared: Prepared,
}

fn german() -> &'static German {
    static G: OnceLock<German> = OnceLock::new();
    G.get_or_init(|| {
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/german_credit.csv");
        let raw = load_csv(&path, &preset("german_credit").expect("preset")).expect("german credit csv");
        let prepared = prepare(&raw, 0).expect("prepare");
        German { raw, prepared }
    })
}

fn logistic(p: &Prepared, seed: u64) -> Model {
    train_model(p, ModelKind::Logistic, &ModelConfigs::default(), seed).expect("logistic model")
}

/// German Credit bundle with quickly trained explainers for all variants.
fn bundle() -> CaseBundle {
    let g = german();
    let specs: Vec<ValueFunctionSpec> = VariantKind::ALL.iter().map(|&k| ValueFunctionSpec::default_for(k, 0).with_background_size(20)).collect();
    let cfg = TrainConfig { epochs: 2, max_instances: Some(60), ..Default::default() };
    train_bundle(&g.raw, &g.prepared, logistic(&g.prepared, 0), &specs, &cfg).expect("bundle")
}

fn numeric_dataset(d: usize, n: usize, seed: u64) -> Dataset {
    let mut r = rng::stream(seed, "acceptance-data", &[]);
    let schema = (0..d).map(|j| FeatureSchema::numeric(&format!("f{j}"), j)).collect();
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let labels = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
    Dataset::new("synthetic", schema, rows, labels).expect("dataset")
}

/// Random logistic model with pairwise interactions.
fn random_model(d: usize, seed: u64) -> impl Predictor {
    let mut r = rng::stream(seed, "acceptance-model", &[]);
    let w: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
    let pairs: Vec<(usize, usize, f64)> = (0..d).map(|_| (r.random_range(0..d), r.random_range(0..d), r.random_range(-1.0..1.0))).collect();
    FnPredictor::new(d, move |x: &[f64]| {
        let lin: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
        let inter: f64 = pairs.iter().map(|&(i, j, c)| c * x[i] * x[j]).sum();
        sigmoid(lin + inter)
    })
}

/// Features 0 and 1 enter identically; the last feature is ignored.
fn symmetric_dummy_model(d: usize, seed: u64) -> impl Predictor {
    let mut r = rng::stream(seed, "acceptance-symmetric", &[]);
    let mut w: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
    w[1] = w[0];
    w[d - 1] = 0.0;
    let c = r.random_range(-1.0..1.0);
    FnPredictor::new(d, move |x: &[f64]| {
        let lin: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
        let extra = if d > 3 { x[2] * (x[0] + x[1]) } else { 0.0 };
        sigmoid(lin + c * x[0] * x[1] + 0.5 * extra)
    })
}

fn deterministic_spec(kind: u8, d: usize, seed: u64) -> ValueFunctionSpec {
    let variant = match kind % 5 {
        0 => Variant::FixedZero,
        1 => Variant::FixedMean { baseline: None },
        2 => Variant::Marginal,
        3 => Variant::JointMarginal,
        _ => Variant::FixedMean { baseline: Some((0..d).map(|j| 0.1 * j as f64 - 0.3).collect()) },
    };
    ValueFunctionSpec::new(variant, seed).with_background_size(30)
}

fn oracle_equivalence() -> Check {
    let t = Instant::now();
    let mut config = Config::with_cases(100);
    config.failure_persistence = None;
    let mut runner = TestRunner::new(config);
    let worst = std::cell::Cell::new(0.0f64);
    let result = runner.run(&(2usize..=10, 0u64..100_000, 0u8..5), |(d, seed, kind)| {
        let train = numeric_dataset(d, 60, seed);
        let model = random_model(d, seed);
        let spec = deterministic_spec(kind, d, seed);
        let x = train.rows[seed as usize % train.len()].clone();
        let exact = exact_shapley(&x, &spec, &model, &train).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let full = kernelshap_estimate(&x, &spec, &model, &train, Budget::Full, seed).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let err = exact.phi.iter().zip(&full.phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst.set(worst.get().max(err));
        if err > 1e-6 {
            return Err(TestCaseError::fail(format!("d={d} kind={kind}: max error {err:.2e}")));
        }
        let bg = build_background(&train, &spec, &model, &x).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let gap = exact.phi.iter().sum::<f64>() - (model.score(&x) - value(&x, &Coalition::empty(d), &model, &bg));
        if gap.abs() > 1e-9 {
            return Err(TestCaseError::fail(format!("efficiency gap {gap:.2e}")));
        }
        if d >= 3 {
            let sym = symmetric_dummy_model(d, seed);
            let baseline: Vec<f64> = (0..d).map(|j| if j < 2 { 0.2 } else { -0.1 * j as f64 }).collect();
            let spec = ValueFunctionSpec::new(Variant::FixedMean { baseline: Some(baseline) }, seed);
            let mut z = x.clone();
            z[1] = z[0];
            let e = exact_shapley(&z, &spec, &sym, &train).map_err(|e| TestCaseError::fail(e.to_string()))?;
            if (e.phi[0] - e.phi[1]).abs() > 1e-12 || e.phi[d - 1].abs() > 1e-12 {
                return Err(TestCaseError::fail(format!("symmetry/dummy violated: {:?}", e.phi)));
            }
        }
        Ok(())
    });
    let secs = t.elapsed().as_secs_f64();
    ok(result.map_err(|e| format!("{e}")))?;
    ensure!(secs < 60.0, "100 cases took {secs:.1}s, limit 60s");
    Ok(format!("100 cases, max |full - exact| = {:.1e}, axioms hold, {secs:.1}s", worst.get()))
}

fn linear_closed_form() -> Check {
    let mut worst = 0.0f64;
    let mut engines_run = 0;
    for (d, seed) in [(6usize, 1u64), (8, 3), (12, 5)] {
        let train = numeric_dataset(d, 80, seed);
        let w: Vec<f64> = (0..d).map(|j| j as f64 * 0.5 - 1.7).collect();
        let wm = w.clone();
        let model = FnPredictor::new(d, move |x: &[f64]| wm.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + 0.3);
        let baselines = [vec![0.0; d], (0..d).map(|j| 0.2 - 0.05 * j as f64).collect::<Vec<f64>>()];
        for (b, baseline) in baselines.iter().enumerate() {
            let spec = if b == 0 { ValueFunctionSpec::new(Variant::FixedZero, 0) } else { ValueFunctionSpec::new(Variant::FixedMean { baseline: Some(baseline.clone()) }, 0) };
            for (k, x) in train.rows.iter().take(10).enumerate() {
                let expected: Vec<f64> = (0..d).map(|j| w[j] * (x[j] - baseline[j])).collect();
                let mut outs = vec![
                    ok(kernelshap_estimate(x, &spec, &model, &train, Budget::Sampled(64), k as u64))?,
                    ok(kernelshap_estimate(x, &spec, &model, &train, Budget::reference(d), 100 + k as u64))?,
                ];
                if d <= 10 {
                    outs.push(ok(exact_shapley(x, &spec, &model, &train))?);
                    outs.push(ok(kernelshap_estimate(x, &spec, &model, &train, Budget::Full, 0))?);
                }
                for o in &outs {
                    engines_run += 1;
                    for j in 0..d {
                        worst = worst.max((o.phi[j] - expected[j]).abs());
                    }
                }
            }
        }
    }
    ensure!(worst <= 1e-6, "max error {worst:.2e} over {engines_run} engine runs");
    Ok(format!("{engines_run} engine runs, max error {worst:.1e}"))
}

fn amortizer_fidelity() -> Check {
    let t = Instant::now();
    let g = german();
    let p = &g.prepared;
    let sizes = (p.train.len(), p.validation.len(), p.test.len());
    ensure!(sizes == (800, 100, 100), "split sizes {sizes:?}");
    let model = logistic(p, 0);
    let spec = ValueFunctionSpec::new(Variant::Marginal, 0);
    let d = p.train.dim();
    let refs: Vec<Vec<f64>> = p
        .test
        .rows
        .iter()
        .map(|x| kernelshap_estimate(x, &spec, &model, &p.train, Budget::reference(d), 0).map(|a| a.phi))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig { epochs: 1000, ..Default::default() };
    let am = ok(train_amortizer(&p.train, &model, &spec, &cfg, &model.fingerprint()))?;
    let (mut recall, mut mse, mut control) = (0.0, 0.0, 0.0);
    let mut r = rng::stream(0, "acceptance-permutation", &[]);
    for (x, reference) in p.test.rows.iter().zip(&refs) {
        let base = ok(am.base_for(x, &model, &p.train))?;
        let phi = ok(am.explain(x, &model, base))?.phi;
        recall += recall_at_k(&phi, reference, 3);
        mse += attribution_error(&phi, reference);
        let mut shuffled = reference.clone();
        shuffled.shuffle(&mut r);
        control += attribution_error(&shuffled, reference);
    }
    let n = refs.len() as f64;
    let (recall, mse, control) = (recall / n, mse / n, control / n);
    let ratio = control / mse;
    let secs = t.elapsed().as_secs_f64();
    let detail = format!("Recall@3 {recall:.3}, MSE {mse:.2e} vs permutation control {control:.2e} ({ratio:.1}x), {secs:.0}s");
    ensure!(recall >= 0.75 && ratio >= 5.0 && secs < 900.0, "{detail}");
    Ok(detail)
}

fn efficiency_identity(b: &CaseBundle) -> Check {
    let d = b.dim();
    let mut r = rng::stream(0, "acceptance-efficiency", &[]);
    let xs: Vec<Vec<f64>> = (0..500).map(|_| (0..d).map(|j| b.train.rows[r.random_range(0..b.train.len())][j]).collect()).collect();
    let mut worst = 0.0f64;
    for &kind in &VariantKind::ALL {
        let am = b.amortizer(kind).ok_or_else(|| format!("no explainer for {kind}"))?;
        for x in &xs {
            let a = ok(b.attribution(x, kind))?;
            let bg = ok(build_background(&b.train, &am.spec, &b.model, x))?;
            let v0 = value(x, &Coalition::empty(d), &b.model, &bg);
            let gap = (a.phi.iter().sum::<f64>() - (b.model.score(x) - v0)).abs();
            worst = worst.max(gap);
        }
    }
    ensure!(worst <= 1e-6, "max efficiency gap {worst:.2e}");
    Ok(format!("500 instances x 8 variants, max gap {worst:.1e}"))
}

fn metric_closed_forms() -> Check {
    let auc = deletion_auc_from_path(&[0.0, 0.25, 0.5, 0.75, 1.0]);
    ensure!(auc == Some(0.375), "deletion AUC {auc:?}");
    let mut r = rng::stream(0, "acceptance-metrics", &[]);
    for d in [2usize, 4, 9, 16] {
        let mut one_hot = vec![0.0; d];
        one_hot[d / 2] = -2.5;
        ensure!(sparsity_ratio(&one_hot) == Some(1.0), "one-hot sparsity {:?}", sparsity_ratio(&one_hot));
        let uniform = vec![0.7; d];
        let s = sparsity_ratio(&uniform).ok_or("uniform sparsity undefined")?;
        ensure!((s - (d as f64).sqrt()).abs() <= 1e-12, "uniform sparsity {s} for d={d}");
        let phi: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let other: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let s = sparsity_ratio(&phi).ok_or("sparsity undefined")?;
        ensure!((1.0..=(d as f64).sqrt() + 1e-12).contains(&s), "sparsity {s} outside bounds");
        ensure!(recall_at_k(&phi, &other, d) == 1.0, "recall@d below 1");
        let distinct: Vec<f64> = (0..d).map(|j| j as f64 + 0.5).collect();
        let reversed: Vec<f64> = distinct.iter().rev().copied().collect();
        ensure!(spearman_agreement(&distinct, &distinct) == Some(1.0), "spearman(identical) {:?}", spearman_agreement(&distinct, &distinct));
        ensure!(spearman_agreement(&distinct, &reversed) == Some(-1.0), "spearman(reversed) {:?}", spearman_agreement(&distinct, &reversed));
    }
    Ok("deletion AUC 0.375, sparsity 1 and sqrt(d), recall@d 1, Spearman +1/-1".into())
}

fn directional_trends() -> Check {
    let g = german();
    let mut positions: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for seed in 0..5u64 {
        let p = ok(prepare(&g.raw, seed))?;
        let perturber = Perturber::model_space(&p.train, &p.state, PerturbationSpec::default());
        let mut records = Vec::new();
        for kind in [ModelKind::Logistic, ModelKind::Gbdt] {
            let model = ok(train_model(&p, kind, &ModelConfigs::default(), seed))?;
            let m: &dyn Predictor = &model;
            let train = &p.train;
            let explainers: Vec<Explainer> = VariantKind::ALL
                .iter()
                .map(|&k| {
                    let spec = ValueFunctionSpec::default_for(k, seed).with_background_size(50);
                    Explainer {
                        variant: k,
                        explain: Box::new(move |x: &[f64]| Ok(kernelshap_estimate(x, &spec, m, train, Budget::Sampled(512), seed)?.phi)),
                    }
                })
                .collect();
            let ctx = PairContext { pair: PairKey::new("german_credit", kind.as_str()), train, model: m, perturber: &perturber, references: None };
            let settings = EvalSettings { sensitivity: false, seed, ..Default::default() };
            let instances: Vec<Vec<f64>> = p.test.rows.iter().take(15).cloned().collect();
            records.extend(ok(evaluate_pair(&ctx, &instances, &explainers, &settings))?.records);
        }
        let report = ok(aggregate_report(&records, 50, seed))?;
        let pos = |metric: Metric, v: VariantKind| report.positions(metric).get(&v).copied().unwrap_or(f64::NAN);
        positions.entry("fixed_zero deletion_auc").or_default().push(pos(Metric::DeletionAuc, VariantKind::FixedZero));
        positions.entry("filtered sparsity").or_default().push(pos(Metric::Sparsity, VariantKind::FilteredConditional));
        positions.entry("filtered contrastivity").or_default().push(pos(Metric::Contrastivity, VariantKind::FilteredConditional));
    }
    // Target position plus one place of tolerance.
    let limits = [("fixed_zero deletion_auc", 3.0), ("filtered sparsity", 2.0), ("filtered contrastivity", 2.0)];
    let mut failed = Vec::new();
    let mut parts = Vec::new();
    for (name, limit) in limits {
        let p = &positions[name];
        parts.push(format!("{name} {p:?}"));
        if !p.iter().all(|&x| x <= limit) {
            failed.push(name);
        }
    }
    let detail = format!("positions over 5 seeds: {}", parts.join("; "));
    ensure!(failed.is_empty(), "{detail}; not reproduced: {}", failed.join(", "));
    Ok(detail)
}

fn fixture_record(pair: &PairKey, variant: VariantKind, instance: usize, values: &[(Metric, Option<f64>)]) -> InstanceMetrics {
    InstanceMetrics { pair: pair.clone(), variant, instance, values: values.iter().copied().collect() }
}

fn aggregation_protocol() -> Check {
    use VariantKind::{FilteredConditional as Fc, FixedZero as Fz, Marginal as Mg};
    let p1 = PairKey::new("a", "logistic");
    let p2 = PairKey::new("a", "gbdt");
    // (pair, variant, sparsity, contrastivity, deletion) per instance.
    let table: [(&PairKey, VariantKind, [f64; 3], [Option<f64>; 3], [f64; 3]); 6] = [
        (&p1, Fz, [1.0, 2.0, 3.0], [Some(0.0); 3], [0.1, 0.2, 0.3]),
        (&p1, Mg, [3.0, 3.0, 3.0], [Some(1.0); 3], [0.5, 0.5, 0.5]),
        (&p1, Fc, [2.0, 2.0, 2.0], [Some(2.0), Some(2.0), Some(5.0)], [0.0, 0.0, 0.0]),
        (&p2, Fz, [4.0, 4.0, 1.0], [Some(1.0); 3], [0.4, 0.4, 0.4]),
        (&p2, Mg, [1.0, 2.0, 3.0], [None; 3], [0.2, 0.2, 0.2]),
        (&p2, Fc, [5.0, 5.0, 5.0], [Some(0.5); 3], [0.1, 0.1, 0.1]),
    ];
    let mut records = Vec::new();
    for (pair, v, sp, co, de) in &table {
        for i in 0..3 {
            records.push(fixture_record(pair, *v, i, &[(Metric::Sparsity, Some(sp[i])), (Metric::Contrastivity, co[i]), (Metric::DeletionAuc, Some(de[i]))]));
        }
    }
    let report = ok(aggregate_report(&records, 50, 0))?;
    let value = |v, m| report.get(v, m).and_then(|r| r.value);
    // Within-pair ranks of pair means, averaged over pairs.
    let expected_ranks = [
        (Fz, Metric::Sparsity, 1.75),
        (Mg, Metric::Sparsity, 2.0),
        (Fc, Metric::Sparsity, 2.25),
        (Fz, Metric::Contrastivity, 2.0),
        (Mg, Metric::Contrastivity, 2.0),
        (Fc, Metric::Contrastivity, 1.5),
    ];
    for (v, m, want) in expected_ranks {
        ensure!(value(v, m) == Some(want), "{v} {}: {:?}, expected {want}", m.as_str(), value(v, m));
    }
    let mg = report.get(Mg, Metric::Contrastivity).ok_or("missing row")?;
    ensure!(mg.n_pairs == 1 && mg.n_missing == 3, "missing values miscounted: {mg:?}");
    for (v, want) in [(Fz, 0.3), (Mg, 0.35), (Fc, 0.05)] {
        let got = value(v, Metric::DeletionAuc).ok_or("deletion mean missing")?;
        ensure!((got - want).abs() < 1e-12, "{v} deletion mean {got}, expected {want}");
    }
    for (v, m) in [(Fz, Metric::Sparsity), (Fc, Metric::Sparsity), (Fz, Metric::DeletionAuc)] {
        let se = report.get(v, m).and_then(|r| r.se);
        ensure!(se.is_some_and(|s| s > 0.0), "{v} {} SE {se:?}", m.as_str());
    }

    let pair = PairKey::new("b", "logistic");
    let se_at = |m: usize| -> Result<f64, String> {
        let mut total = 0.0;
        for rep in 0..5u64 {
            let mut r = rng::stream(rep, "acceptance-se", &[m as u64]);
            let mut recs = Vec::new();
            for i in 0..m {
                for v in [Fz, Mg] {
                    recs.push(fixture_record(&pair, v, i, &[(Metric::DeletionAuc, Some(r.random::<f64>()))]));
                }
            }
            let rep_report = ok(aggregate_report(&recs, 50, rep))?;
            total += rep_report.get(Fz, Metric::DeletionAuc).and_then(|r| r.se).ok_or("no SE")?;
        }
        Ok(total / 5.0)
    };
    let ses = [se_at(50)?, se_at(200)?, se_at(800)?];
    let slope = (ses[2] / ses[0]).ln() / 16f64.ln();
    let detail = format!("hand ranks exact; SE at m=50/200/800: {:.4}/{:.4}/{:.4}, log-log slope {slope:.3}", ses[0], ses[1], ses[2]);
    ensure!(ses[0] > ses[1] && ses[1] > ses[2] && (-0.6..=-0.4).contains(&slope), "{detail}");
    Ok(detail)
}

fn all_arms(x: f64) -> BTreeMap<Arm, f64> {
    Arm::ALL[1..].iter().map(|&a| (a, x)).collect()
}

fn analysis_recovery() -> Check {
    let t = Instant::now();
    let design = DesignSpec::default();
    let planted = PlantedEffects { accuracy_or: all_arms(1.5), confidence_shift: all_arms(1.5f64.ln()), ..Default::default() };
    let reps = 100;
    let mut sums: BTreeMap<(&str, Arm), f64> = BTreeMap::new();
    let (mut covered, mut total, mut wrong_sign) = (0usize, 0usize, 0usize);
    for seed in 0..reps {
        let logs = ok(simulate_analysts(&SimulationSpec { n_records: 4000, seed, planted: planted.clone(), ..Default::default() }))?;
        let acc = ok(fit_logistic_mle(&ok(build_design_matrix(&logs, Outcome::Accuracy, &design))?))?;
        let conf = ok(fit_ordinal_po(&ok(build_design_matrix(&logs, Outcome::Confidence, &design))?))?;
        for (name, fit) in [("accuracy", &acc), ("confidence", &conf)] {
            for &arm in &Arm::ALL[1..] {
                let e = ok(glm_effect(fit, &arm_column(arm)))?;
                *sums.entry((name, arm)).or_default() += e.effect;
                covered += usize::from(e.covers(1.5));
                wrong_sign += usize::from(e.log_effect <= 0.0);
                total += 1;
            }
        }
    }
    let means: Vec<f64> = sums.values().map(|s| s / reps as f64).collect();
    let mean_wrong_sign = means.iter().filter(|m| m.ln() <= 0.0).count();
    let (lo, hi) = means.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &m| (l.min(m), h.max(m)));
    let coverage = covered as f64 / total as f64;

    let mut null_inside = 0;
    let mut null_estimates_inside = 0;
    for seed in 0..20u64 {
        let logs = ok(simulate_analysts(&SimulationSpec { n_records: 4000, seed: 1000 + seed, ..Default::default() }))?;
        let acc = ok(fit_logistic_mle(&ok(build_design_matrix(&logs, Outcome::Accuracy, &design))?))?;
        let mut inside = 0;
        for &arm in &Arm::ALL[1..] {
            let e = ok(glm_effect(&acc, &arm_column(arm)))?.effect;
            inside += usize::from((0.8..=1.25).contains(&e));
        }
        null_estimates_inside += inside;
        null_inside += usize::from(inside == 8);
    }
    let secs = t.elapsed().as_secs_f64();
    let detail = format!(
        "mean planted effects per arm in [{lo:.3}, {hi:.3}], wrong sign {mean_wrong_sign}/{} means ({wrong_sign}/{total} single estimates), CI coverage {coverage:.3}; null seeds with all 8 ORs in [0.8, 1.25]: {null_inside}/20 ({null_estimates_inside}/160 estimates); {secs:.0}s",
        means.len()
    );
    ensure!(lo >= 1.2 && hi <= 1.9 && mean_wrong_sign == 0 && coverage >= 0.9 && null_inside >= 19 && secs < 600.0, "{detail}");
    Ok(detail)
}

const LEAKS: [&str; 11] = [
    "fixed_zero",
    "fixed_mean",
    "uniform",
    "marginal",
    "joint_marginal",
    "conditional",
    "counterfactual",
    "filtered",
    "variant",
    "fingerprint",
    "\"arm\"",
];

fn blind(r: &HttpResponse) -> Result<Value, String> {
    let lower = r.body.to_lowercase();
    if let Some(l) = LEAKS.iter().find(|l| lower.contains(*l)) {
        return Err(format!("payload leaks {l}: {}", r.body));
    }
    let v = r.json();
    ensure!(v["v"] == SCHEMA_VERSION, "payload without version: {}", r.body);
    Ok(v)
}

fn study_contract(b: CaseBundle) -> Check {
    let dir = ok(tempfile::tempdir())?;
    let now = Arc::new(AtomicI64::new(1_760_000_000_000));
    let c = now.clone();
    let study = ok(Study::open(
        StudyConfig { data_dir: dir.path().to_path_buf(), seed: 3, default_cases: 9 },
        vec![b],
        Arc::new(move || c.load(Ordering::SeqCst)),
    ))?;
    let shared = Arc::new(Mutex::new(study));
    let (addr, _handle) = ok(spawn(shared.clone(), "127.0.0.1:0".parse().expect("addr")))?;
    let client = Client::new(addr);
    let (mut duplicates, mut payloads) = (0, 0);
    for a in 0..415 {
        let profile = json!({"analyst_id": format!("analyst_{a:03}"), "professional": a % 3 == 0, "ml_knowledge": "moderate", "shapley_familiarity": "no", "domain_knowledge": {"german_credit": "yes"}});
        let create = json!({"v": "v1", "profile": profile, "dataset": "german_credit", "model": "logistic", "n_cases": 9}).to_string();
        let created = ok(client.post("/sessions", &create))?;
        ensure!(created.status == 200, "create: {}", created.body);
        let id = blind(&created)?["session_id"].as_str().ok_or("no session id")?.to_string();
        for k in 0..9 {
            let next = ok(client.get(&format!("/sessions/{id}/next")))?;
            let case = blind(&next)?["case"].clone();
            ensure!(case["case_index"] == k, "case order: {}", next.body);
            let clarity = if case.get("explanation").is_some() { "clear" } else { "not_applicable" };
            now.fetch_add(3000 + 100 * (a % 7) as i64, Ordering::SeqCst);
            let dur = (3000 + 100 * (a % 7)) as f64 / 1000.0;
            let body = json!({"v": "v1", "case_index": k, "decision": if k % 2 == 0 { "risk" } else { "no_risk" }, "confidence": "moderate", "clarity": clarity, "view_duration_s": dur}).to_string();
            let first = ok(client.post(&format!("/sessions/{id}/review"), &body))?;
            ensure!(first.status == 200, "review: {}", first.body);
            let first = blind(&first)?;
            let again = ok(client.post(&format!("/sessions/{id}/review"), &body))?;
            let again = blind(&again)?;
            ensure!(again["duplicate"] == true && again["record_index"] == first["record_index"], "resubmission not idempotent: {again}");
            duplicates += 1;
            payloads += 4;
        }
    }
    blind(&ok(client.get("/health"))?)?;
    let export = ok(client.get("/export"))?;
    let recs = ok(parse_ndjson(&export.body))?;
    ensure!(recs.len() == 3735, "export has {} records", recs.len());
    let mut sessions: BTreeMap<&str, Vec<Arm>> = BTreeMap::new();
    for r in &recs {
        sessions.entry(&r.session_id).or_default().push(r.arm);
    }
    for arms in sessions.values_mut() {
        arms.sort();
        ensure!(*arms == Arm::ALL.to_vec(), "unbalanced block {arms:?}");
    }
    let stored = shared.lock().map_err(|e| e.to_string())?.records().to_vec();
    verify_chain(&stored).map_err(|i| format!("hash chain breaks at record {i}"))?;
    let mut sorted = stored.clone();
    sorted.sort_by_key(|r| (r.submitted_at, r.record_index));
    ensure!(recs == sorted, "export differs from stored records");
    let reserialized: String = sorted.iter().map(|r| serde_json::to_string(r).expect("record json") + "\n").collect();
    ensure!(reserialized == export.body, "export is not byte-identical to its records");
    let on_disk = ok(ReviewLog::open(dir.path().join(REVIEWS_FILE)))?;
    ensure!(on_disk.records() == stored.as_slice(), "log on disk differs from served records");
    Ok(format!("415 sessions, {payloads} payloads blind, 9-arm blocks balanced, {duplicates} duplicates acknowledged, 3735-record export byte-identical"))
}

fn run(name: &str, f: impl FnOnce() -> Check) -> bool {
    let t = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let secs = t.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {name} ({secs:.1}s): {detail}");
    outcome.is_ok()
}

fn main() {
    let mut results = Vec::new();
    results.push(run("oracle equivalence", oracle_equivalence));
    results.push(run("linear closed form", linear_closed_form));
    results.push(run("amortizer fidelity", amortizer_fidelity));
    let b = bundle();
    results.push(run("efficiency identity", || efficiency_identity(&b)));
    results.push(run("metric closed forms", metric_closed_forms));
    results.push(run("directional trends", directional_trends));
    results.push(run("aggregation protocol", aggregation_protocol));
    results.push(run("analysis recovery", analysis_recovery));
    results.push(run("study service contract", || study_contract(b)));
    let passed = results.iter().filter(|r| **r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    let strict = std::env::var("SHAPVAL_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < results.len() {
        std::process::exit(1);
    }
}
