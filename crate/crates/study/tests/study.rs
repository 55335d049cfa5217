use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use serde_json::{json, Value};
use shapval_core::amortizer::TrainConfig;
use shapval_core::dataset::{Dataset, FeatureSchema};
use shapval_core::models::ModelKind;
use shapval_core::pipeline::{prepare, train_model, ModelConfigs};
use shapval_core::review::{parse_ndjson, Arm, SCHEMA_VERSION};
use shapval_core::rng;
use shapval_core::simulate::{simulate_analysts, SimulationSpec};
use shapval_core::valuefunctions::{ValueFunctionSpec, VariantKind};
use shapval_study::bundle::train_bundle;
use shapval_study::client::{Client, HttpResponse};
use shapval_study::server::{spawn, SharedStudy};
use shapval_study::service::{CreateSession, SubmitReview};
use shapval_study::store::{verify_chain, ReviewLog, REVIEWS_FILE};
use shapval_study::{CaseBundle, Clock, Study, StudyConfig, StudyError};

use rand::Rng;

fn raw_dataset() -> Dataset {
    let schema = vec![
        FeatureSchema::numeric("age_years", 0),
        FeatureSchema::numeric("credit_amount", 1),
        FeatureSchema::categorical("purpose", 2, &["car", "education", "business"]),
    ];
    let mut r = rng::stream(5, "study-fixture", &[]);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..300 {
        let age = r.random_range(19.0..75.0f64).round();
        let amount = r.random_range(250.0..15000.0f64).round();
        let purpose = r.random_range(0..3) as f64;
        let eta = -0.05 * (age - 40.0) + 0.0002 * (amount - 5000.0) + if purpose == 1.0 { 0.8 } else { -0.2 };
        labels.push(u8::from(r.random_bool(1.0 / (1.0 + (-eta).exp()))));
        rows.push(vec![age, amount, purpose]);
    }
    Dataset::new("toy_credit", schema, rows, labels).unwrap()
}

fn build(kinds: &[VariantKind]) -> CaseBundle {
    let raw = raw_dataset();
    let p = prepare(&raw, 0).unwrap();
    let model = train_model(&p, ModelKind::Logistic, &ModelConfigs::default(), 0).unwrap();
    let specs: Vec<ValueFunctionSpec> = kinds.iter().map(|&k| ValueFunctionSpec::default_for(k, 0).with_background_size(8)).collect();
    let cfg = TrainConfig { epochs: 2, max_instances: Some(40), ..Default::default() };
    train_bundle(&raw, &p, model, &specs, &cfg).unwrap()
}

fn bundle() -> CaseBundle {
    static CACHE: OnceLock<Vec<u8>> = OnceLock::new();
    // Bundles are not Clone; rebuild from a cached serialized amortizer set.
    let bytes = CACHE.get_or_init(|| {
        let b = build(&VariantKind::ALL);
        let ams: Vec<_> = VariantKind::ALL.iter().map(|&k| b.amortizer(k).unwrap().clone()).collect();
        serde_json::to_vec(&ams).unwrap()
    });
    let ams: Vec<shapval_core::amortizer::Amortizer> = serde_json::from_slice(bytes).unwrap();
    let raw = raw_dataset();
    let p = prepare(&raw, 0).unwrap();
    let model = train_model(&p, ModelKind::Logistic, &ModelConfigs::default(), 0).unwrap();
    CaseBundle::new(&raw, &p, model, ams).unwrap()
}

struct TestClock(Arc<AtomicI64>);

impl TestClock {
    fn new() -> (Self, Clock) {
        let t = Arc::new(AtomicI64::new(1_760_000_000_000));
        let c = t.clone();
        (TestClock(t), Arc::new(move || c.load(Ordering::SeqCst)))
    }
    fn advance(&self, ms: i64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

fn open(dir: &std::path::Path, clock: Clock) -> Study {
    Study::open(StudyConfig { data_dir: dir.to_path_buf(), seed: 9, default_cases: 9 }, vec![bundle()], clock).unwrap()
}

fn profile(id: &str) -> Value {
    json!({"analyst_id": id, "professional": true, "ml_knowledge": "moderate", "shapley_familiarity": "no", "domain_knowledge": {"toy_credit": "yes"}})
}

fn create_body(id: &str, n: usize) -> String {
    json!({"v": "v1", "profile": profile(id), "dataset": "toy_credit", "model": "logistic", "n_cases": n}).to_string()
}

fn review_body(case_index: usize, has_explanation: bool, duration: f64) -> String {
    let clarity = if has_explanation { "clear" } else { "not_applicable" };
    json!({"v": "v1", "case_index": case_index, "decision": "risk", "confidence": "moderate", "clarity": clarity, "view_duration_s": duration}).to_string()
}

const ARM_STRINGS: [&str; 8] = ["fixed_zero", "fixed_mean", "uniform", "marginal", "joint_marginal", "conditional", "counterfactual", "filtered"];

fn assert_blind(r: &HttpResponse) {
    let lower = r.body.to_lowercase();
    for a in ARM_STRINGS {
        assert!(!lower.contains(a), "payload leaks {a}: {}", r.body);
    }
    assert_eq!(r.json()["v"], SCHEMA_VERSION, "{}", r.body);
}

fn serve(study: Study) -> (Client, SharedStudy) {
    let shared = Arc::new(Mutex::new(study));
    let (addr, _h) = spawn(shared.clone(), "127.0.0.1:0".parse().unwrap()).unwrap();
    (Client::new(addr), shared)
}

#[test]
fn scripted_session_is_blind_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let (clock, c) = TestClock::new();
    let (client, shared) = serve(open(dir.path(), c));
    let created = client.post("/sessions", &create_body("a1", 9)).unwrap();
    assert_eq!(created.status, 200, "{}", created.body);
    assert_blind(&created);
    let id = created.json()["session_id"].as_str().unwrap().to_string();
    assert_eq!(created.json()["n_cases"], 9);
    let mut shown = Vec::new();
    for k in 0..9 {
        let next = client.get(&format!("/sessions/{id}/next")).unwrap();
        assert_eq!(next.status, 200);
        assert_blind(&next);
        let case = &next.json()["case"];
        assert_eq!(case["case_index"], k);
        let has = case.get("explanation").is_some();
        if has {
            let e = &case["explanation"];
            assert_eq!(e["bars"].as_array().unwrap().len(), 3);
            assert_eq!(e["reason_codes"].as_array().unwrap().len(), 3);
            let phi: Vec<f64> = e["bars"].as_array().unwrap().iter().map(|b| b["phi"].as_f64().unwrap().abs()).collect();
            assert!(phi.windows(2).all(|w| w[0] >= w[1]));
        }
        assert_eq!(case["score_histogram"]["counts"].as_array().unwrap().len(), 20);
        assert_eq!(case["features"].as_array().unwrap().len(), 3);
        shown.push(has);
        clock.advance(4000);
        let ack = client.post(&format!("/sessions/{id}/review"), &review_body(k, has, 4.0)).unwrap();
        assert_eq!(ack.status, 200, "{}", ack.body);
        assert_blind(&ack);
        assert_eq!(ack.json()["duplicate"], false);
        assert_eq!(ack.json()["remaining"], 8 - k);
    }
    let done = client.get(&format!("/sessions/{id}/next")).unwrap();
    assert_eq!(done.json()["done"], true);
    assert_blind(&done);
    let health = client.get("/health").unwrap();
    assert_blind(&health);

    let export = client.get("/export").unwrap();
    assert_eq!(export.content_type.as_deref(), Some("application/x-ndjson"));
    let recs = parse_ndjson(&export.body).unwrap();
    assert_eq!(recs.len(), 9);
    let mut arms: Vec<Arm> = recs.iter().map(|r| r.arm).collect();
    arms.sort();
    assert_eq!(arms, Arm::ALL.to_vec());
    for (r, has) in recs.iter().zip(&shown) {
        assert_eq!(r.arm != Arm::None, *has);
        assert!(r.flags.is_empty(), "{:?}", r.flags);
        assert_eq!(r.submitted_at - r.served_at, 4000);
        assert_eq!(r.variant_fingerprint.is_empty(), r.arm == Arm::None);
    }
    assert!(verify_chain(shared.lock().unwrap().records()).is_ok());
}

#[test]
fn protocol_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (clock, c) = TestClock::new();
    let (client, _shared) = serve(open(dir.path(), c));
    let a = client.post("/sessions", &create_body("a2", 9)).unwrap().json();
    let again = client.post("/sessions", &create_body("a2", 9)).unwrap().json();
    assert_eq!(a["session_id"], again["session_id"]);
    assert_eq!(a["created"], true);
    assert_eq!(again["created"], false);
    let conflict = client.post("/sessions", &create_body("a2", 18)).unwrap();
    assert_eq!(conflict.status, 409);

    let id = a["session_id"].as_str().unwrap();
    let review = |body: String| client.post(&format!("/sessions/{id}/review"), &body).unwrap();
    assert_eq!(review(review_body(0, true, 1.0)).status, 409, "not served yet");

    let first = client.get(&format!("/sessions/{id}/next")).unwrap().json();
    clock.advance(30_000);
    let reload = client.get(&format!("/sessions/{id}/next")).unwrap().json();
    assert_eq!(first, reload, "reload serves the same case and time");
    let has = first["case"].get("explanation").is_some();

    let wrong_clarity = review(review_body(0, !has, 1.0));
    assert_eq!(wrong_clarity.status, 422);
    assert_eq!(wrong_clarity.json()["error"]["kind"], "validation");
    assert_eq!(wrong_clarity.json()["v"], "v1");
    assert_eq!(review(review_body(1, has, 1.0)).status, 409);
    let mut bad = serde_json::from_str::<Value>(&review_body(0, has, 1.0)).unwrap();
    bad["v"] = json!("v0");
    assert_eq!(review(bad.to_string()).status, 422);
    bad["v"] = json!("v1");
    bad["decision"] = json!("maybe");
    assert_eq!(review(bad.to_string()).status, 422);
    assert_eq!(client.get("/sessions/nope/next").unwrap().status, 404);
    assert_eq!(client.get("/nothing").unwrap().json()["v"], "v1");

    let tab_a = client.clone().with_tab("tab-a");
    let tab_b = client.clone().with_tab("tab-b");
    assert_eq!(tab_a.get(&format!("/sessions/{id}/next")).unwrap().status, 200);
    let locked = tab_b.get(&format!("/sessions/{id}/next")).unwrap();
    assert_eq!(locked.status, 409);
    assert_eq!(locked.json()["error"]["kind"], "locked");

    let ok = tab_a.post(&format!("/sessions/{id}/review"), &review_body(0, has, 1.0)).unwrap();
    assert_eq!(ok.status, 200);
    let recs = parse_ndjson(&client.get("/export").unwrap().body).unwrap();
    assert!(recs[0].flags.contains(&"duration_mismatch".to_string()));
    assert!(recs[0].flags.contains(&"reloaded".to_string()));
}

#[test]
fn ack_fault_and_restart_keep_one_record() {
    let dir = tempfile::tempdir().unwrap();
    let (clock, c) = TestClock::new();
    let mut study = open(dir.path(), c.clone());
    let req: CreateSession = serde_json::from_str(&create_body("a3", 9)).unwrap();
    let id = study.create_session(req.clone()).unwrap().session_id;
    let submit = |study: &mut Study, k: usize| {
        let next = study.next_case(&id, None).unwrap().case.unwrap();
        assert_eq!(next.case_index, k);
        clock.advance(2000);
        let body: SubmitReview = serde_json::from_str(&review_body(k, next.view.explanation.is_some(), 2.0)).unwrap();
        (study.submit_review(&id, body.clone(), None), body)
    };
    let (ok, _) = submit(&mut study, 0);
    assert!(!ok.unwrap().duplicate);
    study.inject_ack_faults(1);
    let (fault, body) = submit(&mut study, 1);
    assert!(matches!(fault, Err(StudyError::Fault)));
    let retry = study.submit_review(&id, body.clone(), None).unwrap();
    assert!(retry.duplicate);
    assert_eq!(retry.record_index, 1);
    assert_eq!(study.records().len(), 2);
    drop(study);

    let mut study = open(dir.path(), c.clone());
    assert_eq!(study.records().len(), 2);
    assert!(study.submit_review(&id, body, None).unwrap().duplicate);
    let info = study.create_session(req).unwrap();
    assert_eq!(info.completed, 2);
    assert!(!info.created);
    let (ok, _) = submit(&mut study, 2);
    assert_eq!(ok.unwrap().record_index, 2);
    let log = ReviewLog::open(dir.path().join(REVIEWS_FILE)).unwrap();
    assert_eq!(log.len(), 3);
    let cases: Vec<usize> = log.records().iter().map(|r| r.case_index).collect();
    assert_eq!(cases, vec![0, 1, 2]);
}

#[test]
fn missing_checkpoint_refuses_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let partial = build(&VariantKind::ALL[..7]);
    assert_eq!(partial.missing_variants(), vec![VariantKind::FilteredConditional]);
    let (_clock, c) = TestClock::new();
    let study = Study::open(StudyConfig { data_dir: dir.path().to_path_buf(), ..Default::default() }, vec![partial], c).unwrap();
    let (client, _s) = serve(study);
    let r = client.post("/sessions", &create_body("a4", 9)).unwrap();
    assert_eq!(r.status, 503);
    assert_eq!(r.json()["error"]["kind"], "missing_checkpoint");
}

#[test]
fn arms_balance_across_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let (_clock, c) = TestClock::new();
    let mut study = open(dir.path(), c);
    let mut counts = std::collections::BTreeMap::new();
    for a in 0..20 {
        let req: CreateSession = serde_json::from_str(&create_body(&format!("b{a}"), 18)).unwrap();
        let id = study.create_session(req).unwrap().session_id;
        let mut i = 0;
        while let Some(case) = study.next_case(&id, None).unwrap().case {
            let has = case.view.explanation.is_some();
            let body: SubmitReview = serde_json::from_str(&review_body(i, has, 0.0)).unwrap();
            study.submit_review(&id, body, None).unwrap();
            i += 1;
        }
        assert_eq!(i, 18);
    }
    for r in study.records() {
        *counts.entry(r.arm).or_insert(0) += 1;
    }
    assert_eq!(counts.len(), 9);
    assert!(counts.values().all(|&n| n == 40), "{counts:?}");
    for session in study.records().chunks(9) {
        let mut arms: Vec<Arm> = session.iter().map(|r| r.arm).collect();
        arms.sort();
        assert_eq!(arms, Arm::ALL.to_vec());
        let above = session.iter().filter(|r| r.score >= 0.5).count();
        assert!(above > 0 && above < 9);
    }
}

#[test]
fn export_round_trip_is_exact_and_fast() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_analysts(&SimulationSpec { n_records: 3735, n_analysts: 37, seed: 2, ..Default::default() }).unwrap();
    {
        let mut log = ReviewLog::open(dir.path().join(REVIEWS_FILE)).unwrap();
        for r in sim {
            log.append(r).unwrap();
        }
    }
    let (_clock, c) = TestClock::new();
    let (client, shared) = serve(open(dir.path(), c));
    let t = Instant::now();
    let export = client.get("/export").unwrap();
    let recs = parse_ndjson(&export.body).unwrap();
    let elapsed = t.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "{elapsed:?}");
    assert_eq!(recs.len(), 3735);
    let mut stored = shared.lock().unwrap().records().to_vec();
    stored.sort_by_key(|r| (r.submitted_at, r.record_index));
    assert_eq!(recs, stored);
    let reserialized: String = recs.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    assert_eq!(reserialized, export.body);
    assert!(recs.windows(2).all(|w| (w[0].submitted_at, w[0].record_index) < (w[1].submitted_at, w[1].record_index)));

    let cut = recs[1000].submitted_at;
    let later = parse_ndjson(&client.get(&format!("/export?since={cut}")).unwrap().body).unwrap();
    assert_eq!(later.len(), recs.iter().filter(|r| r.submitted_at > cut).count());
    let one = parse_ndjson(&client.get("/export?analyst=analyst_003").unwrap().body).unwrap();
    assert!(!one.is_empty() && one.iter().all(|r| r.analyst_id == "analyst_003"));
    assert_eq!(client.get("/export?since=yesterday").unwrap().status, 422);
}
