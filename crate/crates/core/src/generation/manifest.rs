//! Run manifests: per-batch counters, stall records and rejections for each
//! pipeline stage. Wall-clock times live in one top-level field so that two
//! runs can be compared with that field removed.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::io::write_json_pretty;
use crate::Error;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchCounters {
    pub label: String,
    /// Backend calls, retries included.
    pub calls: usize,
    pub attempted: usize,
    pub parsed: usize,
    pub rejected: usize,
    pub deduped: usize,
    pub accepted: usize,
}

impl BatchCounters {
    pub fn new(label: impl Into<String>) -> Self {
        BatchCounters {
            label: label.into(),
            ..Default::default()
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.accepted <= self.parsed && self.parsed <= self.attempted
    }

    fn absorb(&mut self, other: &BatchCounters) {
        self.calls += other.calls;
        self.attempted += other.attempted;
        self.parsed += other.parsed;
        self.rejected += other.rejected;
        self.deduped += other.deduped;
        self.accepted += other.accepted;
    }
}

/// How tool generation for one subfield ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StallRecord {
    pub field: String,
    pub subfield: String,
    pub rounds: usize,
    pub tools_added: usize,
    /// Consecutive rounds without a new tool when the loop stopped.
    pub final_stalls: usize,
    /// "stalled" or "max_rounds".
    pub stopped_by: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub batch: String,
    pub item: String,
    pub codes: Vec<String>,
    pub detail: String,
}

/// Pool size after every `interval` backend calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YieldPoint {
    pub calls: usize,
    pub tools: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageManifest {
    pub batches: Vec<BatchCounters>,
    pub totals: BatchCounters,
    pub stalls: Vec<StallRecord>,
    pub rejections: Vec<Rejection>,
    pub yield_curve: Vec<YieldPoint>,
    pub config: Value,
}

impl StageManifest {
    pub fn push_batch(&mut self, batch: BatchCounters) {
        self.totals.label = "total".into();
        self.totals.absorb(&batch);
        self.batches.push(batch);
    }

    pub fn reject(&mut self, batch: &str, item: impl Into<String>, codes: Vec<String>, detail: impl Into<String>) {
        self.rejections.push(Rejection {
            batch: batch.to_string(),
            item: item.into(),
            codes,
            detail: detail.into(),
        });
    }

    /// `accepted <= parsed <= attempted` for every batch and the totals.
    pub fn is_consistent(&self) -> bool {
        self.batches.iter().all(BatchCounters::is_consistent) && self.totals.is_consistent()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimes {
    pub started: String,
    pub finished: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunManifest {
    pub stages: BTreeMap<String, StageManifest>,
    pub timestamps: BTreeMap<String, StageTimes>,
}

impl RunManifest {
    /// Loads `path`, or starts empty if it does not exist.
    pub fn load_or_default(path: &Path) -> Result<RunManifest, Error> {
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| Error::parse(path, e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(RunManifest::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        write_json_pretty(path, self)
    }

    pub fn record(&mut self, stage: &str, manifest: StageManifest, times: StageTimes) {
        self.stages.insert(stage.to_string(), manifest);
        self.timestamps.insert(stage.to_string(), times);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_accumulate() {
        let mut m = StageManifest::default();
        let mut a = BatchCounters::new("a");
        a.attempted = 5;
        a.parsed = 5;
        a.deduped = 1;
        a.rejected = 1;
        a.accepted = 3;
        m.push_batch(a);
        let mut b = BatchCounters::new("b");
        b.attempted = 2;
        b.parsed = 1;
        m.push_batch(b);
        assert_eq!(m.totals.attempted, 7);
        assert_eq!(m.totals.accepted, 3);
        assert!(m.is_consistent());
        let mut bad = BatchCounters::new("c");
        bad.accepted = 1;
        m.push_batch(bad);
        assert!(!m.is_consistent());
    }

    #[test]
    fn save_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        assert_eq!(RunManifest::load_or_default(&path).unwrap(), RunManifest::default());
        let mut run = RunManifest::default();
        run.record("fields", StageManifest::default(), StageTimes { started: "s".into(), finished: "f".into() });
        run.save(&path).unwrap();
        assert_eq!(RunManifest::load_or_default(&path).unwrap(), run);
    }
}
