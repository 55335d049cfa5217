//! Append-only NDJSON logs. Review records are hash-chained: each record's
//! `hash` is the SHA-256 of its predecessor's hash followed by its own JSON
//! with an empty `hash` field.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shapval_core::review::{parse_ndjson, AnalystProfile, ReviewRecord};

use crate::{StudyError, StudyResult};

pub const REVIEWS_FILE: &str = "reviews.ndjson";
pub const SESSIONS_FILE: &str = "sessions.ndjson";

fn storage(path: &Path, e: impl std::fmt::Display) -> StudyError {
    StudyError::Storage(format!("{}: {e}", path.display()))
}

pub fn record_hash(rec: &ReviewRecord) -> String {
    let mut bare = rec.clone();
    bare.hash = String::new();
    let body = serde_json::to_string(&bare).expect("records serialize");
    let mut h = Sha256::new();
    h.update(rec.prev_hash.as_bytes());
    h.update(body.as_bytes());
    hex::encode(h.finalize())
}

/// Checks indices, links and hashes; returns the index of the first bad record.
pub fn verify_chain(records: &[ReviewRecord]) -> Result<(), usize> {
    let mut prev = String::new();
    for (i, r) in records.iter().enumerate() {
        if r.record_index != i as u64 || r.prev_hash != prev || record_hash(r) != r.hash {
            return Err(i);
        }
        prev = r.hash.clone();
    }
    Ok(())
}

fn open_append(path: &Path) -> StudyResult<File> {
    OpenOptions::new().create(true).append(true).open(path).map_err(|e| storage(path, e))
}

fn append_line(file: &mut File, path: &Path, line: &str) -> StudyResult<()> {
    let mut buf = Vec::with_capacity(line.len() + 1);
    buf.extend_from_slice(line.as_bytes());
    buf.push(b'\n');
    file.write_all(&buf).map_err(|e| storage(path, e))?;
    file.sync_data().map_err(|e| storage(path, e))
}

fn read_text(path: &Path) -> StudyResult<String> {
    match std::fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(String::new()),
        Err(e) => Err(storage(path, e)),
    }
}

pub struct ReviewLog {
    path: PathBuf,
    file: File,
    records: Vec<ReviewRecord>,
    by_case: HashMap<(String, usize), usize>,
}

impl ReviewLog {
    /// Opens or creates the log, replaying and verifying existing records.
    pub fn open(path: impl Into<PathBuf>) -> StudyResult<Self> {
        let path = path.into();
        let records = parse_ndjson(&read_text(&path)?)?;
        if let Err(i) = verify_chain(&records) {
            return Err(StudyError::Storage(format!("{}: hash chain broken at record {i}", path.display())));
        }
        let by_case = records.iter().enumerate().map(|(i, r)| ((r.session_id.clone(), r.case_index), i)).collect();
        let file = open_append(&path)?;
        Ok(ReviewLog { path, file, records, by_case })
    }

    pub fn records(&self) -> &[ReviewRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, session_id: &str, case_index: usize) -> Option<&ReviewRecord> {
        self.by_case.get(&(session_id.to_string(), case_index)).map(|&i| &self.records[i])
    }

    /// Assigns index and hashes, then writes and syncs before returning.
    pub fn append(&mut self, mut rec: ReviewRecord) -> StudyResult<&ReviewRecord> {
        let key = (rec.session_id.clone(), rec.case_index);
        if self.by_case.contains_key(&key) {
            return Err(StudyError::Conflict(format!("case {} of session {} already recorded", key.1, key.0)));
        }
        rec.record_index = self.records.len() as u64;
        rec.prev_hash = self.records.last().map(|r| r.hash.clone()).unwrap_or_default();
        rec.hash = record_hash(&rec);
        let line = serde_json::to_string(&rec).map_err(|e| storage(&self.path, e))?;
        append_line(&mut self.file, &self.path, &line)?;
        self.by_case.insert(key, self.records.len());
        self.records.push(rec);
        Ok(self.records.last().expect("just pushed"))
    }
}

/// A created session, enough to rebuild its schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub v: String,
    pub session_id: String,
    pub profile: AnalystProfile,
    pub dataset: String,
    pub model_kind: String,
    pub seed: u64,
    pub n_cases: usize,
    pub created_at: i64,
}

pub struct SessionLog {
    path: PathBuf,
    file: File,
}

impl SessionLog {
    pub fn open(path: impl Into<PathBuf>) -> StudyResult<(Self, Vec<SessionRecord>)> {
        let path = path.into();
        let text = read_text(&path)?;
        let sessions = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| storage(&path, e)))
            .collect::<StudyResult<Vec<SessionRecord>>>()?;
        let file = open_append(&path)?;
        Ok((SessionLog { path, file }, sessions))
    }

    pub fn append(&mut self, s: &SessionRecord) -> StudyResult<()> {
        let line = serde_json::to_string(s).map_err(|e| storage(&self.path, e))?;
        append_line(&mut self.file, &self.path, &line)
    }
}
