//! Append-only audit trail. Records carry payload digests and routing
//! metadata; payload text never enters the log.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::router::Assigned;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditOutcome {
    Dispatched,
    Blocked,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub timestamp: String,
    pub session_id: String,
    pub task_index: usize,
    /// Hex SHA-256 of the outbound payload.
    pub payload_digest: String,
    pub decision: Assigned,
    pub tier: Option<u8>,
    pub risk_score: f64,
    pub reasons: Vec<String>,
    pub outcome: AuditOutcome,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

pub fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

enum Sink {
    File(File),
    Memory(Vec<AuditRecord>),
    Discard,
}

/// Line-delimited JSON audit log. Appends are serialized.
pub struct AuditLog {
    sink: Mutex<Sink>,
    written: Mutex<u64>,
}

impl std::fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuditLog")
            .field("written", &self.written())
            .finish()
    }
}

impl AuditLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::with(Sink::File(f)))
    }

    /// Keeps records in memory; see [`AuditLog::records`].
    pub fn in_memory() -> Self {
        Self::with(Sink::Memory(Vec::new()))
    }

    pub fn discard() -> Self {
        Self::with(Sink::Discard)
    }

    fn with(sink: Sink) -> Self {
        Self {
            sink: Mutex::new(sink),
            written: Mutex::new(0),
        }
    }

    pub fn append(&self, records: &[AuditRecord]) -> std::io::Result<()> {
        let mut sink = self.sink.lock().unwrap();
        match &mut *sink {
            Sink::File(f) => {
                let mut buf = String::new();
                for r in records {
                    buf.push_str(&serde_json::to_string(r).map_err(std::io::Error::other)?);
                    buf.push('\n');
                }
                f.write_all(buf.as_bytes())?;
                f.flush()?;
            }
            Sink::Memory(v) => v.extend_from_slice(records),
            Sink::Discard => {}
        }
        *self.written.lock().unwrap() += records.len() as u64;
        Ok(())
    }

    pub fn written(&self) -> u64 {
        *self.written.lock().unwrap()
    }

    /// Records held by an in-memory log; empty for other sinks.
    pub fn records(&self) -> Vec<AuditRecord> {
        match &*self.sink.lock().unwrap() {
            Sink::Memory(v) => v.clone(),
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> AuditRecord {
        AuditRecord {
            timestamp: timestamp(Utc::now()),
            session_id: "s".into(),
            task_index: 0,
            payload_digest: "ab".repeat(32),
            decision: Assigned::Tier(1),
            tier: Some(1),
            risk_score: 0.0,
            reasons: vec![],
            outcome: AuditOutcome::Dispatched,
            input_tokens: 10,
            output_tokens: 2,
        }
    }

    #[test]
    fn file_log_appends_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/audit.jsonl");
        let log = AuditLog::open(&path).unwrap();
        log.append(&[record(), record()]).unwrap();
        drop(log);
        let log = AuditLog::open(&path).unwrap();
        log.append(&[record()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        let back: AuditRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(back.decision, Assigned::Tier(1));
    }

    #[test]
    fn memory_log_counts() {
        let log = AuditLog::in_memory();
        log.append(&[record()]).unwrap();
        assert_eq!(log.written(), 1);
        assert_eq!(log.records().len(), 1);
    }
}
