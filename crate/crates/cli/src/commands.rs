//! The pipeline stages. Each returns a JSON summary for stdout.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use shapval_core::amortizer::{train_amortizer, Amortizer};
use shapval_core::analysis::{alignment_regression, analyze_logs, AlignmentRegressionSpec, CaseMetrics, Outcome};
use shapval_core::dataset::{load_csv, Dataset};
use shapval_core::metrics::{aggregate_report, evaluate_pair, AgreementMatrix, Explainer, Metric, PairContext, PairKey, Perturber};
use shapval_core::models::{log_loss, roc_auc, Model, ModelKind, Predictor};
use shapval_core::oracle::{kernelshap_estimate, AttributionVector, Budget};
use shapval_core::pipeline::{prepare, train_model, Prepared};
use shapval_core::review::{read_log, Arm, SCHEMA_VERSION};
use shapval_core::rng;
use shapval_core::simulate::{simulate_analysts, SimulationSpec};
use shapval_core::valuefunctions::VariantKind;
use shapval_study::server::spawn;
use shapval_study::service::system_clock;
use shapval_study::{CaseBundle, Study, StudyConfig};

use crate::artifacts::{pair_name, Layout};
use crate::config::Loaded;
use crate::error::{CliError, CliResult};

pub const KIND_PREPARED: &str = "prepared";
pub const KIND_MODEL: &str = "model";
pub const KIND_AMORTIZER: &str = "amortizer";
pub const KIND_ORACLE: &str = "oracle";
pub const KIND_METRICS: &str = "metric_report";
pub const KIND_CASE_METRICS: &str = "case_metrics";
pub const KIND_SIMULATION: &str = "simulation";
pub const KIND_ANALYSIS: &str = "analysis";

pub const ALIGNMENT_METRICS: [&str; 5] = ["sparsity", "sensitivity", "contrastivity", "deletion_auc", "insertion_auc"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedArtifact {
    /// Encoded rows before preprocessing, needed for display.
    pub raw: Dataset,
    pub prepared: Prepared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub model: Model,
    pub fingerprint: String,
    pub validation_auc: f64,
    pub test_auc: f64,
    pub test_log_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleArtifact {
    pub budget: Budget,
    pub n_instances: usize,
    pub variants: BTreeMap<VariantKind, Vec<AttributionVector>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMeta {
    pub spec: SimulationSpec,
    pub n_records: usize,
    pub log_sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulateArgs {
    pub n: Option<usize>,
    pub accuracy_or: Option<f64>,
    pub confidence_shift: Option<f64>,
    pub clarity_or: Option<f64>,
    pub time_multiplier: Option<f64>,
}

pub struct Ctx<'a> {
    pub loaded: &'a Loaded,
    pub layout: Layout,
}

impl<'a> Ctx<'a> {
    pub fn new(loaded: &'a Loaded) -> Self {
        Ctx { loaded, layout: Layout { root: loaded.out_dir.clone(), hash: loaded.hash.clone() } }
    }

    fn seed(&self, tag: &str, idx: &[u64]) -> u64 {
        rng::derive_seed(self.loaded.config.seed, tag, idx)
    }

    fn pairs(&self) -> Vec<(usize, String, usize, ModelKind)> {
        let c = &self.loaded.config;
        let mut out = Vec::new();
        for (di, d) in c.datasets.iter().enumerate() {
            for (mi, &k) in c.models.kinds.iter().enumerate() {
                out.push((di, d.name.clone(), mi, k));
            }
        }
        out
    }

    fn summary(&self, command: &str, extra: Value) -> Value {
        let mut v = json!({"v": SCHEMA_VERSION, "command": command, "config_hash": self.loaded.hash, "out_dir": self.loaded.out_dir});
        if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
            m.extend(e);
        }
        v
    }

    fn load_prepared(&self, dataset: &str) -> CliResult<PreparedArtifact> {
        self.layout.read_json(&self.layout.prepared(dataset), KIND_PREPARED, "prepare-data")
    }

    fn load_model(&self, dataset: &str, kind: ModelKind) -> CliResult<ModelArtifact> {
        self.layout.read_json(&self.layout.model(dataset, kind.as_str()), KIND_MODEL, "train-models")
    }

    fn load_amortizer(&self, dataset: &str, kind: ModelKind, v: VariantKind) -> CliResult<Amortizer> {
        let a: Amortizer = self.layout.read_json(&self.layout.amortizer(dataset, kind.as_str(), v.as_str()), KIND_AMORTIZER, "train-amortizers")?;
        a.check_format()?;
        Ok(a)
    }

    fn instances(&self, p: &Prepared, max: Option<usize>) -> Vec<Vec<f64>> {
        p.test.rows.iter().take(max.unwrap_or(usize::MAX)).cloned().collect()
    }
}

pub fn prepare_data(ctx: &Ctx) -> CliResult<Value> {
    let c = &ctx.loaded.config;
    let mut sizes = Vec::new();
    for (i, d) in c.datasets.iter().enumerate() {
        let spec = c.dataset_spec(d)?;
        let raw = load_csv(ctx.loaded.base_dir.join(&d.path), &spec)?;
        let prepared = prepare(&raw, ctx.seed("split", &[i as u64]))?;
        log::info!("{}: {} train / {} validation / {} test", d.name, prepared.train.len(), prepared.validation.len(), prepared.test.len());
        sizes.push(json!({"dataset": d.name, "features": raw.dim(), "train": prepared.train.len(), "validation": prepared.validation.len(), "test": prepared.test.len()}));
        ctx.layout.write_json(&ctx.layout.prepared(&d.name), KIND_PREPARED, &PreparedArtifact { raw, prepared })?;
    }
    Ok(ctx.summary("prepare-data", json!({"datasets": sizes})))
}

pub fn train_models(ctx: &Ctx) -> CliResult<Value> {
    let c = &ctx.loaded.config;
    let mut out = Vec::new();
    for (di, name, _, kind) in ctx.pairs() {
        let p = ctx.load_prepared(&name)?.prepared;
        let model = train_model(&p, kind, &c.models.configs, ctx.seed("model", &[di as u64]))?;
        let score = |d: &Dataset| d.rows.iter().map(|r| model.score(r)).collect::<Vec<f64>>();
        let (val, test) = (score(&p.validation), score(&p.test));
        let art = ModelArtifact {
            fingerprint: model.fingerprint(),
            validation_auc: roc_auc(&val, &p.validation.labels),
            test_auc: roc_auc(&test, &p.test.labels),
            test_log_loss: log_loss(&test, &p.test.labels),
            model,
        };
        log::info!("{name}/{}: test AUC {:.3}", kind.as_str(), art.test_auc);
        out.push(json!({"dataset": name, "model": kind.as_str(), "test_auc": art.test_auc, "validation_auc": art.validation_auc}));
        ctx.layout.write_json(&ctx.layout.model(&name, kind.as_str()), KIND_MODEL, &art)?;
    }
    Ok(ctx.summary("train-models", json!({"models": out})))
}

pub fn train_amortizers(ctx: &Ctx) -> CliResult<Value> {
    let c = &ctx.loaded.config;
    let specs = c.variant_specs();
    let mut out = Vec::new();
    for (di, name, mi, kind) in ctx.pairs() {
        let p = ctx.load_prepared(&name)?.prepared;
        let m = ctx.load_model(&name, kind)?;
        for (vi, spec) in specs.iter().enumerate() {
            let mut cfg = c.amortizer.clone();
            cfg.seed = ctx.seed("amortizer", &[di as u64, mi as u64, vi as u64]);
            log::info!("{name}/{}: training {} amortizer", kind.as_str(), spec.kind());
            let a = train_amortizer(&p.train, &m.model, spec, &cfg, &m.fingerprint)?;
            out.push(json!({"dataset": name, "model": kind.as_str(), "variant": spec.kind().as_str(), "final_loss": a.report.final_loss}));
            ctx.layout.write_json(&ctx.layout.amortizer(&name, kind.as_str(), spec.kind().as_str()), KIND_AMORTIZER, &a)?;
        }
    }
    Ok(ctx.summary("train-amortizers", json!({"amortizers": out})))
}

pub fn compute_oracle(ctx: &Ctx) -> CliResult<Value> {
    let c = &ctx.loaded.config;
    let specs = c.variant_specs();
    let mut out = Vec::new();
    for (di, name, mi, kind) in ctx.pairs() {
        let p = ctx.load_prepared(&name)?.prepared;
        let m = ctx.load_model(&name, kind)?;
        let budget = c.oracle.budget.unwrap_or_else(|| Budget::reference(p.train.dim()));
        let instances = ctx.instances(&p, c.oracle.max_instances);
        let seed = ctx.seed("oracle", &[di as u64, mi as u64]);
        let mut variants = BTreeMap::new();
        for spec in &specs {
            log::info!("{name}/{}: oracle for {} on {} instances", kind.as_str(), spec.kind(), instances.len());
            let phis = instances
                .iter()
                .map(|x| kernelshap_estimate(x, spec, &m.model, &p.train, budget, seed))
                .collect::<Result<Vec<_>, _>>()?;
            variants.insert(spec.kind(), phis);
        }
        out.push(json!({"dataset": name, "model": kind.as_str(), "instances": instances.len(), "budget": budget}));
        let art = OracleArtifact { budget, n_instances: instances.len(), variants };
        ctx.layout.write_json(&ctx.layout.oracle(&name, kind.as_str()), KIND_ORACLE, &art)?;
    }
    Ok(ctx.summary("compute-oracle", json!({"pairs": out})))
}

pub fn evaluate_metrics(ctx: &Ctx) -> CliResult<Value> {
    let c = &ctx.loaded.config;
    let mut all = Vec::new();
    let mut case_metrics = Vec::new();
    let mut notes = BTreeMap::new();
    let dir = ctx.layout.metrics_dir();
    for (di, name, mi, kind) in ctx.pairs() {
        let p = ctx.load_prepared(&name)?.prepared;
        let m = ctx.load_model(&name, kind)?;
        let model: &dyn Predictor = &m.model;
        let amortizers = VariantKind::ALL.iter().map(|&v| ctx.load_amortizer(&name, kind, v)).collect::<CliResult<Vec<_>>>()?;
        let instances = ctx.instances(&p, c.metrics.max_instances);
        let oracle_path = ctx.layout.oracle(&name, kind.as_str());
        let references: Option<BTreeMap<VariantKind, Vec<Vec<f64>>>> = if oracle_path.is_file() {
            let o: OracleArtifact = ctx.layout.read_json(&oracle_path, KIND_ORACLE, "compute-oracle")?;
            if o.n_instances < instances.len() {
                return Err(CliError::Config(format!("oracle covers {} instances, metrics need {}", o.n_instances, instances.len())));
            }
            Some(o.variants.into_iter().map(|(k, v)| (k, v.into_iter().map(|a| a.phi).collect())).collect())
        } else {
            notes.insert(format!("references[{}]", pair_name(&name, kind.as_str())), "no oracle artifact; recall and attribution error omitted".to_string());
            None
        };
        let train = &p.train;
        let explainers: Vec<Explainer> = amortizers
            .iter()
            .map(|a| Explainer {
                variant: a.variant(),
                explain: Box::new(move |x: &[f64]| {
                    let base = a.base_for(x, model, train)?;
                    Ok(a.explain(x, model, base)?.phi)
                }),
            })
            .collect();
        let perturber = Perturber::model_space(&p.train, &p.state, c.metrics.settings.perturbation.clone());
        let pair = PairKey::new(&name, kind.as_str());
        let pctx = PairContext { pair: pair.clone(), train, model, perturber: &perturber, references: references.as_ref() };
        let mut settings = c.metrics.settings.clone();
        settings.seed = ctx.seed("metrics", &[di as u64, mi as u64]);
        log::info!("{name}/{}: evaluating {} explainers on {} instances", kind.as_str(), explainers.len(), instances.len());
        let ev = evaluate_pair(&pctx, &instances, &explainers, &settings)?;
        notes.insert(format!("counterfactual_failures[{}]", pair_name(&name, kind.as_str())), ev.counterfactual_failures.to_string());
        let agreement = AgreementMatrix::from_attributions(&ev.variants, &ev.attributions);
        ctx.layout.write_csv(&dir.join(format!("agreement_{}.csv", pair_name(&name, kind.as_str()))), &agreement.to_csv())?;
        for r in &ev.records {
            case_metrics.push(CaseMetrics {
                dataset: name.clone(),
                model_kind: kind.as_str().to_string(),
                case_id: r.instance,
                arm: Arm::from_variant(r.variant),
                values: r.values.iter().filter_map(|(m, v)| v.map(|v| (m.as_str().to_string(), v))).collect(),
            });
        }
        all.extend(ev.records);
    }
    let mut report = aggregate_report(&all, c.metrics.n_boot, ctx.seed("bootstrap", &[]))?;
    report.notes.extend(notes);
    ctx.layout.write_json(&dir.join("report.json"), KIND_METRICS, &report)?;
    ctx.layout.write_csv(&dir.join("report.csv"), &report.to_csv())?;
    ctx.layout.write_json(&dir.join("case_metrics.json"), KIND_CASE_METRICS, &case_metrics)?;
    let positions: BTreeMap<&str, BTreeMap<VariantKind, f64>> = [Metric::DeletionAuc, Metric::Sparsity, Metric::Contrastivity]
        .iter()
        .map(|m| (m.as_str(), report.positions(*m)))
        .collect();
    Ok(ctx.summary("evaluate-metrics", json!({"records": all.len(), "positions": positions})))
}

/// Builds every (dataset, model) bundle with the amortizers that exist.
pub fn load_bundles(ctx: &Ctx) -> CliResult<Vec<CaseBundle>> {
    let mut out = Vec::new();
    for (_, name, _, kind) in ctx.pairs() {
        let art = ctx.load_prepared(&name)?;
        let m = ctx.load_model(&name, kind)?;
        let mut amortizers = Vec::new();
        for v in VariantKind::ALL {
            match ctx.load_amortizer(&name, kind, v) {
                Ok(a) => amortizers.push(a),
                Err(CliError::MissingArtifact { path, .. }) => log::warn!("{path} missing; sessions for this pair will be refused"),
                Err(e) => return Err(e),
            }
        }
        out.push(CaseBundle::new(&art.raw, &art.prepared, m.model, amortizers)?);
    }
    Ok(out)
}

pub fn serve_study(ctx: &Ctx) -> CliResult<Value> {
    let c = &ctx.loaded.config;
    let bundles = load_bundles(ctx)?;
    let cfg = StudyConfig { data_dir: ctx.loaded.out_dir.join(&c.study.data_dir), seed: ctx.seed("study", &[]), default_cases: c.study.n_cases };
    let study = Study::open(cfg, bundles, system_clock())?;
    let addr = c.study.bind.parse().map_err(|e| CliError::Config(format!("study.bind: {e}")))?;
    let (bound, handle) = spawn(Arc::new(Mutex::new(study)), addr).map_err(|e| CliError::Io { path: c.study.bind.clone(), message: e.to_string() })?;
    println!("{}", ctx.summary("serve-study", json!({"listening": bound.to_string()})));
    log::info!("study service listening on {bound}");
    match handle.join() {
        Ok(Ok(())) => Ok(ctx.summary("serve-study", json!({"stopped": true}))),
        Ok(Err(e)) => Err(CliError::Io { path: bound.to_string(), message: e.to_string() }),
        Err(_) => Err(CliError::Io { path: bound.to_string(), message: "server thread panicked".into() }),
    }
}

pub fn simulate(ctx: &Ctx, args: &SimulateArgs) -> CliResult<Value> {
    let mut spec = ctx.loaded.config.simulate.clone();
    spec.seed = ctx.seed("simulate", &[]);
    if let Some(n) = args.n {
        spec.n_records = n;
    }
    for arm in Arm::ALL.into_iter().filter(|&a| a != Arm::None) {
        if let Some(v) = args.accuracy_or {
            spec.planted.accuracy_or.insert(arm, v);
        }
        if let Some(v) = args.confidence_shift {
            spec.planted.confidence_shift.insert(arm, v);
        }
        if let Some(v) = args.clarity_or {
            spec.planted.clarity_or.insert(arm, v);
        }
        if let Some(v) = args.time_multiplier {
            spec.planted.time_multiplier.insert(arm, v);
        }
    }
    let records = simulate_analysts(&spec)?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("records serialize"));
        text.push('\n');
    }
    let path = ctx.layout.simulated_log();
    ctx.layout.write_text(&path, &text)?;
    let digest = hex::encode(<sha2::Sha256 as sha2::Digest>::digest(text.as_bytes()));
    let meta = SimulationMeta { spec, n_records: records.len(), log_sha256: digest };
    ctx.layout.write_json(&path.with_extension("meta.json"), KIND_SIMULATION, &meta)?;
    Ok(ctx.summary("simulate-analysts", json!({"records": records.len(), "log": path})))
}

pub fn analyze(ctx: &Ctx, log: Option<PathBuf>) -> CliResult<Value> {
    let path = log.unwrap_or_else(|| ctx.layout.simulated_log());
    if !path.is_file() {
        return Err(CliError::MissingArtifact { path: path.display().to_string(), command: "simulate-analysts".into() });
    }
    let logs = read_log(&path)?;
    let mut cfg = ctx.loaded.config.analysis.clone();
    cfg.quantile.seed = ctx.seed("analysis", &[]);
    let report = analyze_logs(&logs, &cfg)?;
    let dir = ctx.layout.analysis_dir();
    ctx.layout.write_csv(&dir.join("effects.csv"), &report.table.to_csv())?;
    ctx.layout.write_json(&dir.join("analysis.json"), KIND_ANALYSIS, &report)?;

    let mut alignment = BTreeMap::new();
    let cm_path = ctx.layout.metrics_dir().join("case_metrics.json");
    if cm_path.is_file() {
        let cms: Vec<CaseMetrics> = ctx.layout.read_json(&cm_path, KIND_CASE_METRICS, "evaluate-metrics")?;
        let available: Vec<String> = ALIGNMENT_METRICS
            .iter()
            .filter(|m| cms.iter().any(|c| c.values.contains_key(**m)))
            .map(|m| m.to_string())
            .collect();
        for response in [Outcome::Clarity, Outcome::Confidence] {
            let spec = AlignmentRegressionSpec { response, metrics: available.clone() };
            match alignment_regression(&logs, &cms, &spec, &cfg.design) {
                Ok(res) => {
                    ctx.layout.write_csv(&dir.join(format!("alignment_{}.csv", response.as_str())), &res.to_csv())?;
                    alignment.insert(response.as_str(), json!({"n_used": res.n_used, "n_missing": res.n_missing}));
                }
                Err(e) => {
                    log::warn!("alignment regression for {} skipped: {e}", response.as_str());
                    alignment.insert(response.as_str(), json!({"skipped": e.to_string()}));
                }
            }
        }
    } else {
        log::warn!("no case metrics at {}; alignment regression skipped", cm_path.display());
    }
    Ok(ctx.summary("analyze-logs", json!({"records": logs.len(), "effects": dir.join("effects.csv"), "alignment": alignment})))
}
