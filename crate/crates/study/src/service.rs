//! Session lifecycle: create, serve, review, export.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shapval_core::models::ModelKind;
use shapval_core::review::{
    check_clarity, AnalystProfile, Arm, Clarity, Confidence, Decision, ReviewRecord, DURATION_FLAG_SECONDS,
    FLAG_DURATION_MISMATCH, SCHEMA_VERSION,
};
use shapval_core::rng;

use crate::assign::{schedule, Slot};
use crate::bundle::{CaseBundle, CaseView};
use crate::store::{ReviewLog, SessionLog, SessionRecord, REVIEWS_FILE, SESSIONS_FILE};
use crate::{StudyError, StudyResult};

pub const DEFAULT_CASES: usize = 9;
pub const MAX_CASES: usize = 900;
pub const FLAG_RELOADED: &str = "reloaded";
/// A tab lock is released after this long without activity.
pub const LOCK_IDLE_MS: i64 = 30 * 60 * 1000;

/// Milliseconds since the Unix epoch.
pub type Clock = Arc<dyn Fn() -> i64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub data_dir: PathBuf,
    pub seed: u64,
    pub default_cases: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig { data_dir: PathBuf::from("study_data"), seed: 0, default_cases: DEFAULT_CASES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub v: String,
    pub profile: AnalystProfile,
    pub dataset: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub n_cases: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub v: String,
    pub session_id: String,
    pub dataset: String,
    pub model_kind: String,
    pub n_cases: usize,
    pub completed: usize,
    /// False when an existing session was returned.
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePayload {
    pub case_index: usize,
    pub n_cases: usize,
    pub served_at: i64,
    #[serde(flatten)]
    pub view: CaseView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextCase {
    pub v: String,
    pub session_id: String,
    pub done: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case: Option<CasePayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitReview {
    pub v: String,
    pub case_index: usize,
    pub decision: Decision,
    pub confidence: Confidence,
    pub clarity: Clarity,
    pub view_duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub v: String,
    pub session_id: String,
    pub case_index: usize,
    pub record_index: u64,
    pub hash: String,
    pub duplicate: bool,
    pub done: bool,
    pub remaining: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportQuery {
    /// Only records submitted strictly after this time (ms).
    pub since: Option<i64>,
    pub session: Option<String>,
    pub analyst: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub v: String,
    pub status: String,
    pub records: usize,
    pub sessions: usize,
    pub bundles: Vec<String>,
}

struct Session {
    info: SessionRecord,
    slots: Vec<Slot>,
    next: usize,
    served_at: Option<i64>,
    serves: usize,
    tab: Option<(String, i64)>,
}

type BundleKey = (String, ModelKind);

pub struct Study {
    config: StudyConfig,
    bundles: BTreeMap<BundleKey, Arc<CaseBundle>>,
    sessions: HashMap<String, Session>,
    reviews: ReviewLog,
    session_log: SessionLog,
    clock: Clock,
    views: HashMap<(BundleKey, usize, Arm), CaseView>,
    ack_faults: usize,
}

fn version(v: &str) -> StudyResult<()> {
    if v != SCHEMA_VERSION {
        return Err(StudyError::Validation(format!("unsupported payload version {v:?}, expected {SCHEMA_VERSION:?}")));
    }
    Ok(())
}

pub fn session_id(seed: u64, analyst: &str, dataset: &str, model: ModelKind) -> String {
    let digest = Sha256::digest(format!("{seed}|{analyst}|{dataset}|{}", model.as_str()).as_bytes());
    hex::encode(&digest[..8])
}

impl Study {
    /// Opens the data directory, replaying sessions and reviews.
    pub fn open(config: StudyConfig, bundles: Vec<CaseBundle>, clock: Clock) -> StudyResult<Study> {
        std::fs::create_dir_all(&config.data_dir)
            .map_err(|e| StudyError::Storage(format!("{}: {e}", config.data_dir.display())))?;
        let bundles: BTreeMap<BundleKey, Arc<CaseBundle>> =
            bundles.into_iter().map(|b| ((b.dataset.clone(), b.model_kind), Arc::new(b))).collect();
        let reviews = ReviewLog::open(config.data_dir.join(REVIEWS_FILE))?;
        let (session_log, stored) = SessionLog::open(config.data_dir.join(SESSIONS_FILE))?;
        let mut study = Study {
            config,
            bundles,
            sessions: HashMap::new(),
            reviews,
            session_log,
            clock,
            views: HashMap::new(),
            ack_faults: 0,
        };
        for info in stored {
            let kind: ModelKind = info.model_kind.parse()?;
            let bundle = study.bundle(&info.dataset, kind)?;
            let slots = schedule(&bundle.scores, bundle.threshold, info.seed, info.n_cases);
            let mut next = 0;
            while next < slots.len() && study.reviews.get(&info.session_id, next).is_some() {
                next += 1;
            }
            study.sessions.insert(info.session_id.clone(), Session { info, slots, next, served_at: None, serves: 0, tab: None });
        }
        Ok(study)
    }

    pub fn now(&self) -> i64 {
        (self.clock)()
    }

    /// The next `n` acknowledgements fail after their record is durably appended.
    pub fn inject_ack_faults(&mut self, n: usize) {
        self.ack_faults = n;
    }

    pub fn records(&self) -> &[ReviewRecord] {
        self.reviews.records()
    }

    fn bundle(&self, dataset: &str, kind: ModelKind) -> StudyResult<Arc<CaseBundle>> {
        self.bundles
            .get(&(dataset.to_string(), kind))
            .cloned()
            .ok_or_else(|| StudyError::UnknownBundle(format!("{dataset}/{}", kind.as_str())))
    }

    fn info(&self, s: &Session) -> SessionInfo {
        SessionInfo {
            v: SCHEMA_VERSION.to_string(),
            session_id: s.info.session_id.clone(),
            dataset: s.info.dataset.clone(),
            model_kind: s.info.model_kind.clone(),
            n_cases: s.info.n_cases,
            completed: s.next,
            created: false,
        }
    }

    pub fn create_session(&mut self, req: CreateSession) -> StudyResult<SessionInfo> {
        version(&req.v)?;
        if req.profile.analyst_id.trim().is_empty() {
            return Err(StudyError::Validation("analyst_id must not be empty".into()));
        }
        let kind = match &req.model {
            Some(m) => m.parse::<ModelKind>().map_err(|e| StudyError::Validation(e.to_string()))?,
            None => self
                .bundles
                .keys()
                .find(|(d, _)| *d == req.dataset)
                .map(|(_, k)| *k)
                .ok_or_else(|| StudyError::UnknownBundle(req.dataset.clone()))?,
        };
        let bundle = self.bundle(&req.dataset, kind)?;
        let missing = bundle.missing_variants();
        if !missing.is_empty() {
            let names: Vec<&str> = missing.iter().map(|k| k.as_str()).collect();
            return Err(StudyError::MissingCheckpoint(format!("no amortizer for {}", names.join(", "))));
        }
        let n_cases = req.n_cases.unwrap_or(self.config.default_cases);
        if n_cases == 0 || n_cases > MAX_CASES {
            return Err(StudyError::Validation(format!("n_cases must be in 1..={MAX_CASES}")));
        }
        let id = session_id(self.config.seed, &req.profile.analyst_id, &req.dataset, kind);
        if let Some(s) = self.sessions.get(&id) {
            if s.info.profile != req.profile || s.info.n_cases != n_cases {
                return Err(StudyError::Conflict(format!("session {id} exists with a different profile or length")));
            }
            return Ok(self.info(s));
        }
        let info = SessionRecord {
            v: SCHEMA_VERSION.to_string(),
            session_id: id.clone(),
            profile: req.profile,
            dataset: req.dataset,
            model_kind: kind.as_str().to_string(),
            seed: rng::derive_seed(self.config.seed, "session", &[u64::from_str_radix(&id, 16).unwrap_or(0)]),
            n_cases,
            created_at: self.now(),
        };
        self.session_log.append(&info)?;
        let slots = schedule(&bundle.scores, bundle.threshold, info.seed, n_cases);
        log::info!("session {id} created for {} cases", n_cases);
        let s = Session { info, slots, next: 0, served_at: None, serves: 0, tab: None };
        let mut out = self.info(&s);
        out.created = true;
        self.sessions.insert(id, s);
        Ok(out)
    }

    fn lock(session: &mut Session, tab: Option<&str>, now: i64) -> StudyResult<()> {
        let Some(tab) = tab else { return Ok(()) };
        match &session.tab {
            Some((held, at)) if held != tab && now - at < LOCK_IDLE_MS => Err(StudyError::Locked),
            _ => {
                session.tab = Some((tab.to_string(), now));
                Ok(())
            }
        }
    }

    fn view(&mut self, bundle: &CaseBundle, case_id: usize, arm: Arm) -> StudyResult<CaseView> {
        let key = ((bundle.dataset.clone(), bundle.model_kind), case_id, arm);
        if let Some(v) = self.views.get(&key) {
            return Ok(v.clone());
        }
        let v = bundle.case_view(case_id, arm.variant())?;
        self.views.insert(key, v.clone());
        Ok(v)
    }

    /// Serves the current case; repeated calls return it again with the
    /// original `served_at`.
    pub fn next_case(&mut self, id: &str, tab: Option<&str>) -> StudyResult<NextCase> {
        let now = self.now();
        let s = self.sessions.get_mut(id).ok_or_else(|| StudyError::UnknownSession(id.to_string()))?;
        Self::lock(s, tab, now)?;
        if s.next >= s.slots.len() {
            return Ok(NextCase { v: SCHEMA_VERSION.to_string(), session_id: id.to_string(), done: true, case: None });
        }
        let served_at = *s.served_at.get_or_insert(now);
        s.serves += 1;
        let (case_index, n_cases, slot) = (s.next, s.info.n_cases, s.slots[s.next]);
        let (dataset, kind) = (s.info.dataset.clone(), s.info.model_kind.parse::<ModelKind>()?);
        let bundle = self.bundle(&dataset, kind)?;
        let view = self.view(&bundle, slot.case_id, slot.arm)?;
        Ok(NextCase {
            v: SCHEMA_VERSION.to_string(),
            session_id: id.to_string(),
            done: false,
            case: Some(CasePayload { case_index, n_cases, served_at, view }),
        })
    }

    fn ack(&self, s: &Session, rec: &ReviewRecord, duplicate: bool) -> Ack {
        Ack {
            v: SCHEMA_VERSION.to_string(),
            session_id: rec.session_id.clone(),
            case_index: rec.case_index,
            record_index: rec.record_index,
            hash: rec.hash.clone(),
            duplicate,
            done: s.next >= s.slots.len(),
            remaining: s.slots.len() - s.next,
        }
    }

    pub fn submit_review(&mut self, id: &str, body: SubmitReview, tab: Option<&str>) -> StudyResult<Ack> {
        version(&body.v)?;
        let now = self.now();
        let s = self.sessions.get_mut(id).ok_or_else(|| StudyError::UnknownSession(id.to_string()))?;
        Self::lock(s, tab, now)?;
        if let Some(rec) = self.reviews.get(id, body.case_index) {
            let s = &self.sessions[id];
            return Ok(self.ack(s, rec, true));
        }
        if body.case_index != s.next {
            return Err(StudyError::Conflict(format!("expected a review for case {}, got {}", s.next, body.case_index)));
        }
        let Some(served_at) = s.served_at else {
            return Err(StudyError::Conflict(format!("case {} has not been served", body.case_index)));
        };
        let slot = s.slots[s.next];
        check_clarity(slot.arm, body.clarity).map_err(|e| StudyError::Validation(e.to_string()))?;
        if !body.view_duration_s.is_finite() || body.view_duration_s < 0.0 {
            return Err(StudyError::Validation("view_duration_s must be a finite value >= 0".into()));
        }
        let mut flags = Vec::new();
        let elapsed = (now - served_at) as f64 / 1000.0;
        if (body.view_duration_s - elapsed).abs() > DURATION_FLAG_SECONDS {
            flags.push(FLAG_DURATION_MISMATCH.to_string());
        }
        if s.serves > 1 {
            flags.push(FLAG_RELOADED.to_string());
        }
        let info = s.info.clone();
        let kind: ModelKind = info.model_kind.parse()?;
        let bundle = self.bundle(&info.dataset, kind)?;
        let c = slot.case_id;
        let rec = ReviewRecord {
            v: SCHEMA_VERSION.to_string(),
            record_index: 0,
            session_id: id.to_string(),
            analyst_id: info.profile.analyst_id.clone(),
            profile: info.profile.clone(),
            dataset: info.dataset.clone(),
            model_kind: info.model_kind.clone(),
            case_index: body.case_index,
            case_id: c,
            arm: slot.arm,
            decision: body.decision,
            confidence: body.confidence,
            clarity: body.clarity,
            served_at,
            submitted_at: now.max(served_at),
            view_duration_s: body.view_duration_s,
            score: bundle.scores[c],
            score_percentile: bundle.percentile(bundle.scores[c]),
            true_label: bundle.labels[c],
            features: bundle.display_values(c),
            variant_fingerprint: slot.arm.variant().map(|k| bundle.fingerprint(k)).unwrap_or_default(),
            flags,
            prev_hash: String::new(),
            hash: String::new(),
        };
        let rec = self.reviews.append(rec)?.clone();
        let s = self.sessions.get_mut(id).expect("session checked above");
        s.next += 1;
        s.served_at = None;
        s.serves = 0;
        if self.ack_faults > 0 {
            self.ack_faults -= 1;
            return Err(StudyError::Fault);
        }
        Ok(self.ack(&self.sessions[id], &rec, false))
    }

    /// NDJSON ordered by submission time, then record index.
    pub fn export(&self, q: &ExportQuery) -> String {
        let mut recs: Vec<&ReviewRecord> = self
            .reviews
            .records()
            .iter()
            .filter(|r| q.since.is_none_or(|t| r.submitted_at > t))
            .filter(|r| q.session.as_ref().is_none_or(|s| &r.session_id == s))
            .filter(|r| q.analyst.as_ref().is_none_or(|a| &r.analyst_id == a))
            .collect();
        recs.sort_by_key(|r| (r.submitted_at, r.record_index));
        let mut out = String::new();
        for r in recs {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn health(&self) -> Health {
        Health {
            v: SCHEMA_VERSION.to_string(),
            status: "ok".into(),
            records: self.reviews.len(),
            sessions: self.sessions.len(),
            bundles: self.bundles.keys().map(|(d, k)| format!("{d}/{}", k.as_str())).collect(),
        }
    }
}
