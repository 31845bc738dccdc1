//! User-study session records, their append-only store, and the timing analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Autocomplete,
    Writing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub task: TaskKind,
    /// Position of the task within the session plan.
    #[serde(default)]
    pub task_index: Option<usize>,
    pub target: String,
    /// Keywords for autocomplete tasks, the typed sentence for writing tasks.
    pub input: String,
    #[serde(default)]
    pub suggestions: Vec<String>,
    /// Per-suggestion semantic-equivalence marks; autocomplete only.
    #[serde(default)]
    pub marks: Option<Vec<bool>>,
    pub elapsed_s: f64,
    /// 0 for the first submission, 1 after a keyword revision.
    #[serde(default)]
    pub revision: u32,
    #[serde(default)]
    pub started_at: Option<String>,
    #[serde(default)]
    pub submitted_at: Option<String>,
}

impl SessionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.session_id.trim().is_empty() {
            return Err(Error::Validation("session_id must not be empty".into()));
        }
        if !(self.elapsed_s.is_finite() && self.elapsed_s > 0.0) {
            return Err(Error::Validation(format!("elapsed_s must be positive, got {}", self.elapsed_s)));
        }
        match (self.task, &self.marks) {
            (TaskKind::Writing, Some(_)) => {
                Err(Error::Validation("equivalence marks are only valid for autocomplete tasks".into()))
            }
            (TaskKind::Autocomplete, Some(m)) if m.len() != self.suggestions.len() => Err(Error::Validation(format!(
                "{} marks for {} suggestions",
                m.len(),
                self.suggestions.len()
            ))),
            _ => Ok(()),
        }
    }
}

/// Append-only storage for session records.
pub trait SessionStore: Send + Sync {
    fn append(&self, record: &SessionRecord) -> Result<()>;

    fn records(&self) -> Result<Vec<SessionRecord>>;

    fn session(&self, id: &str) -> Result<Vec<SessionRecord>> {
        Ok(self.records()?.into_iter().filter(|r| r.session_id == id).collect())
    }

    /// All records as JSON lines.
    fn export(&self) -> Result<String> {
        let mut out = String::new();
        for r in self.records()? {
            out.push_str(&serde_json::to_string(&r).expect("session records serialize"));
            out.push('\n');
        }
        Ok(out)
    }
}

/// One JSON record per line; appends are serialized and synced before returning.
pub struct JsonlSessionStore {
    path: PathBuf,
    lock: Mutex<()>,
}

impl JsonlSessionStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::StoreUnavailable(format!("{}: {e}", dir.display())))?;
        }
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::StoreUnavailable(format!("{}: {e}", path.display())))?;
        Ok(JsonlSessionStore { path, lock: Mutex::new(()) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl SessionStore for JsonlSessionStore {
    fn append(&self, record: &SessionRecord) -> Result<()> {
        record.validate()?;
        let mut line = serde_json::to_string(record).expect("session records serialize");
        line.push('\n');
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let unavailable = |e: std::io::Error| Error::StoreUnavailable(format!("{}: {e}", self.path.display()));
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path).map_err(unavailable)?;
        file.write_all(line.as_bytes()).map_err(unavailable)?;
        file.sync_data().map_err(unavailable)
    }

    fn records(&self) -> Result<Vec<SessionRecord>> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let file = std::fs::File::open(&self.path)
            .map_err(|e| Error::StoreUnavailable(format!("{}: {e}", self.path.display())))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::StoreUnavailable(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
                what: "session record",
                detail: format!("line {}: {e}", i + 1),
            })?);
        }
        Ok(out)
    }
}

/// In-memory store for tests and ephemeral servers.
#[derive(Default)]
pub struct MemorySessionStore {
    records: Mutex<Vec<SessionRecord>>,
}

impl SessionStore for MemorySessionStore {
    fn append(&self, record: &SessionRecord) -> Result<()> {
        record.validate()?;
        self.records.lock().unwrap_or_else(|e| e.into_inner()).push(record.clone());
        Ok(())
    }

    fn records(&self) -> Result<Vec<SessionRecord>> {
        Ok(self.records.lock().unwrap_or_else(|e| e.into_inner()).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionFilters {
    /// A session is dropped when more than this fraction of its responses are invalid.
    pub max_invalid_fraction: f64,
    /// A writing response is invalid when shorter than this fraction of the target.
    pub min_writing_ratio: f64,
    /// Records slower than mean + this many standard deviations (per task) are dropped.
    pub outlier_sd: f64,
}

impl Default for SessionFilters {
    fn default() -> Self {
        SessionFilters { max_invalid_fraction: 0.2, min_writing_ratio: 0.5, outlier_sd: 1.5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskTiming {
    pub count: usize,
    pub mean_s: f64,
    pub variance_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub sessions_total: usize,
    pub sessions_kept: usize,
    pub dropped_sessions: Vec<String>,
    pub records_kept: usize,
    pub outliers_removed: usize,
    pub autocomplete: TaskTiming,
    pub writing: TaskTiming,
    /// Fraction of marked autocomplete records whose first suggestion was equivalent.
    pub top1_rate: Option<f64>,
    /// Fraction whose top three suggestions contained an equivalent one.
    pub top3_rate: Option<f64>,
    /// Set when nothing survives filtering.
    pub empty: bool,
}

fn invalid(r: &SessionRecord, f: &SessionFilters) -> bool {
    let input = r.input.chars().count() as f64;
    let target = r.target.chars().count() as f64;
    match r.task {
        TaskKind::Autocomplete => input > target,
        TaskKind::Writing => input < f.min_writing_ratio * target,
    }
}

fn timing(xs: &[f64]) -> TaskTiming {
    if xs.is_empty() {
        return TaskTiming::default();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let variance = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    TaskTiming { count: xs.len(), mean_s: mean, variance_s: variance }
}

/// Applies the session and outlier filters, then summarizes typing time and equivalence rates.
pub fn analyze_sessions(records: &[SessionRecord], filters: &SessionFilters) -> SessionSummary {
    let mut by_session: BTreeMap<&str, Vec<&SessionRecord>> = BTreeMap::new();
    for r in records {
        by_session.entry(&r.session_id).or_default().push(r);
    }
    let mut dropped = BTreeSet::new();
    for (id, rs) in &by_session {
        for kind in [TaskKind::Autocomplete, TaskKind::Writing] {
            let of_kind: Vec<_> = rs.iter().filter(|r| r.task == kind).collect();
            if of_kind.is_empty() {
                continue;
            }
            let bad = of_kind.iter().filter(|r| invalid(r, filters)).count();
            if bad as f64 / of_kind.len() as f64 > filters.max_invalid_fraction {
                dropped.insert(id.to_string());
            }
        }
    }
    let survivors: Vec<&SessionRecord> = records.iter().filter(|r| !dropped.contains(&r.session_id)).collect();

    let mut kept = Vec::new();
    let mut outliers = 0;
    for kind in [TaskKind::Autocomplete, TaskKind::Writing] {
        let of_kind: Vec<&SessionRecord> = survivors.iter().copied().filter(|r| r.task == kind).collect();
        let t = timing(&of_kind.iter().map(|r| r.elapsed_s).collect::<Vec<_>>());
        let cutoff = t.mean_s + filters.outlier_sd * t.variance_s.sqrt();
        for r in of_kind {
            if r.elapsed_s > cutoff {
                outliers += 1;
            } else {
                kept.push(r);
            }
        }
    }

    let times = |kind| kept.iter().filter(|r| r.task == kind).map(|r| r.elapsed_s).collect::<Vec<_>>();
    let marked: Vec<&Vec<bool>> =
        kept.iter().filter(|r| r.task == TaskKind::Autocomplete).filter_map(|r| r.marks.as_ref()).collect();
    let rate = |top: usize| {
        (!marked.is_empty())
            .then(|| marked.iter().filter(|m| m.iter().take(top).any(|&x| x)).count() as f64 / marked.len() as f64)
    };
    let kept_sessions: BTreeSet<&str> = kept.iter().map(|r| r.session_id.as_str()).collect();
    SessionSummary {
        sessions_total: by_session.len(),
        sessions_kept: kept_sessions.len(),
        dropped_sessions: dropped.into_iter().collect(),
        records_kept: kept.len(),
        outliers_removed: outliers,
        autocomplete: timing(&times(TaskKind::Autocomplete)),
        writing: timing(&times(TaskKind::Writing)),
        top1_rate: rate(1),
        top3_rate: rate(3),
        empty: kept.is_empty(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn auto(session: &str, target: &str, input: &str, elapsed: f64, marks: [bool; 3]) -> SessionRecord {
        SessionRecord {
            session_id: session.into(),
            task: TaskKind::Autocomplete,
            task_index: None,
            target: target.into(),
            input: input.into(),
            suggestions: vec!["a".into(), "b".into(), "c".into()],
            marks: Some(marks.to_vec()),
            elapsed_s: elapsed,
            revision: 0,
            started_at: None,
            submitted_at: None,
        }
    }

    fn writing(session: &str, target: &str, input: &str, elapsed: f64) -> SessionRecord {
        SessionRecord {
            task: TaskKind::Writing,
            suggestions: vec![],
            marks: None,
            ..auto(session, target, input, elapsed, [false; 3])
        }
    }

    #[test]
    fn schema_rules() {
        let ok = auto("s", "i will be late", "late", 2.0, [true, false, false]);
        assert!(ok.validate().is_ok());
        let bad_time = SessionRecord { elapsed_s: 0.0, ..ok.clone() };
        assert!(bad_time.validate().is_err());
        let marked_writing = SessionRecord { task: TaskKind::Writing, ..ok.clone() };
        assert!(matches!(marked_writing.validate(), Err(Error::Validation(_))));
        let short_marks = SessionRecord { marks: Some(vec![true]), ..ok };
        assert!(short_marks.validate().is_err());
    }

    #[test]
    fn drops_sessions_over_the_invalid_fraction() {
        let mut rs = Vec::new();
        for i in 0..50 {
            let input = if i < 11 { "a very long keyword input" } else { "late" };
            rs.push(auto("bad", "i am late", input, 3.0, [true, false, false]));
            let input = if i < 10 { "a very long keyword input" } else { "late" };
            rs.push(auto("edge", "i am late", input, 3.0, [false, true, false]));
        }
        let s = analyze_sessions(&rs, &SessionFilters::default());
        assert_eq!(s.dropped_sessions, ["bad"]);
        assert_eq!(s.sessions_kept, 1);
        assert_eq!(s.records_kept, 50);
        assert_eq!(s.top1_rate, Some(0.0));
        assert_eq!(s.top3_rate, Some(1.0));
    }

    #[test]
    fn writing_filter_and_outliers() {
        let mut rs: Vec<_> = (0..9).map(|_| writing("w", "we will come back", "we will come back", 5.0)).collect();
        rs.push(writing("w", "we will come back", "we will come back", 50.0));
        rs.push(auto("w", "we will come back", "come back", 4.0, [true, true, false]));
        let s = analyze_sessions(&rs, &SessionFilters::default());
        assert_eq!(s.outliers_removed, 1);
        assert_eq!(s.writing.count, 9);
        assert!((s.writing.mean_s - 5.0).abs() < 1e-12 && s.writing.variance_s.abs() < 1e-12);
        assert_eq!(s.top1_rate, Some(1.0));

        let short: Vec<_> = (0..4).map(|_| writing("x", "we will come back next week", "back", 5.0)).collect();
        let s = analyze_sessions(&short, &SessionFilters::default());
        assert!(s.empty && s.sessions_kept == 0 && s.records_kept == 0);
        assert_eq!(s.top1_rate, None);
    }

    #[test]
    fn jsonl_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sessions.jsonl");
        let store = JsonlSessionStore::open(&path).unwrap();
        for i in 0..50 {
            store.append(&auto(&format!("s{}", i % 2), "t t t", "t", 1.0 + i as f64, [true, false, true])).unwrap();
        }
        assert!(store.append(&SessionRecord { elapsed_s: -1.0, ..auto("s", "t", "t", 1.0, [false; 3]) }).is_err());
        drop(store);
        let reopened = JsonlSessionStore::open(&path).unwrap();
        assert_eq!(reopened.records().unwrap().len(), 50);
        assert_eq!(reopened.session("s1").unwrap().len(), 25);
        assert_eq!(reopened.export().unwrap().lines().count(), 50);
    }
}
