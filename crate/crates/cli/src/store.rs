//! Append-only JSONL journal of annotations. The latest line for a
//! `(dialogue, turn, annotator)` key wins.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use dmr::{ReferTarget, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Draft,
    Saved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub dialogue: String,
    pub turn: u32,
    pub annotator: String,
    pub dmr: String,
    #[serde(default)]
    pub referents: BTreeMap<Var, BTreeSet<ReferTarget>>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub status: Status,
    pub revision: u64,
}

pub type Key = (String, u32, String);

impl AnnotationRecord {
    pub fn key(&self) -> Key {
        (self.dialogue.clone(), self.turn, self.annotator.clone())
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("revision {expected} is stale; the stored revision is {current}")]
    Conflict { expected: u64, current: u64 },
    #[error("annotation store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

struct Inner {
    records: HashMap<Key, AnnotationRecord>,
    journal: File,
}

pub struct Store {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl Store {
    /// Opens or creates the journal and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| StoreError::Io { path: path.clone(), source };
        let journal = OpenOptions::new().create(true).append(true).read(true).open(&path).map_err(io)?;
        let mut records = HashMap::new();
        for (no, line) in BufReader::new(File::open(&path).map_err(io)?).lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<AnnotationRecord>(&line) {
                Ok(r) => {
                    records.insert(r.key(), r);
                }
                Err(e) => log::warn!("{}:{}: skipping unreadable record: {e}", path.display(), no + 1),
            }
        }
        Ok(Store {
            path,
            inner: Mutex::new(Inner { records, journal }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &Key) -> Option<AnnotationRecord> {
        self.inner.lock().expect("store lock").records.get(key).cloned()
    }

    pub fn for_dialogue(&self, dialogue: &str) -> Vec<AnnotationRecord> {
        let inner = self.inner.lock().expect("store lock");
        let mut out: Vec<AnnotationRecord> = inner.records.values().filter(|r| r.dialogue == dialogue).cloned().collect();
        out.sort_by_key(AnnotationRecord::key);
        out
    }

    pub fn all(&self) -> Vec<AnnotationRecord> {
        let inner = self.inner.lock().expect("store lock");
        let mut out: Vec<AnnotationRecord> = inner.records.values().cloned().collect();
        out.sort_by_key(AnnotationRecord::key);
        out
    }

    /// Writes `record` if the stored revision for its key is `expected`
    /// (0 when absent). The written record carries the next revision.
    pub fn commit(&self, mut record: AnnotationRecord, expected: u64) -> Result<AnnotationRecord, StoreError> {
        let mut inner = self.inner.lock().expect("store lock");
        let key = record.key();
        let current = inner.records.get(&key).map_or(0, |r| r.revision);
        if current != expected {
            return Err(StoreError::Conflict { expected, current });
        }
        record.revision = current + 1;
        let line = serde_json::to_string(&record).expect("records serialize") + "\n";
        let io = |source| StoreError::Io { path: self.path.clone(), source };
        inner.journal.write_all(line.as_bytes()).map_err(io)?;
        inner.journal.flush().map_err(io)?;
        inner.records.insert(key, record.clone());
        Ok(record)
    }
}
