//! Topic log for publishing cubes to other principals.
//!
//! Appends are serialized by one lock and numbered by a global sequence, so
//! every subscriber sees a topic in exactly the append order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::Mutex;

use memos_core::governance::decide_access;
use memos_core::ids::is_valid_label;
use memos_core::{canon, Action, MemCube, PrincipalId, Timestamp};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Visibility {
    /// Anyone may subscribe.
    Public,
    /// Delivered only to principals holding Read on the cube.
    #[default]
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreEntry {
    pub seq: u64,
    pub topic: String,
    pub cube: MemCube,
    pub publisher: PrincipalId,
    pub published_at: Timestamp,
    pub visibility: Visibility,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("invalid topic {0:?}")]
    BadTopic(String),
    #[error("store io: {0}")]
    Io(String),
}

#[derive(Default)]
struct Inner {
    next_seq: u64,
    topics: BTreeMap<String, Vec<StoreEntry>>,
}

pub struct MemStore {
    inner: Mutex<Inner>,
    log: Option<PathBuf>,
}

impl MemStore {
    pub fn in_memory() -> Self {
        MemStore { inner: Mutex::new(Inner { next_seq: 1, ..Inner::default() }), log: None }
    }

    /// A store persisted as one canonical entry per line in `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let io = |e: std::io::Error| StoreError::Io(e.to_string());
        let mut inner = Inner { next_seq: 1, ..Inner::default() };
        match fs::read(&path) {
            Ok(bytes) => {
                for (i, line) in bytes.split(|b| *b == b'\n').filter(|l| !l.is_empty()).enumerate() {
                    let e: StoreEntry = canon::decode_strict(line)
                        .map_err(|err| StoreError::Io(format!("store line {}: {err}", i + 1)))?;
                    inner.next_seq = e.seq + 1;
                    inner.topics.entry(e.topic.clone()).or_default().push(e);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                if let Some(dir) = path.parent() {
                    fs::create_dir_all(dir).map_err(io)?;
                }
            }
            Err(e) => return Err(io(e)),
        }
        Ok(MemStore { inner: Mutex::new(inner), log: Some(path) })
    }

    /// Appends; the caller has already checked Export and sensitivity.
    pub fn append(
        &self,
        topic: &str,
        cube: MemCube,
        publisher: PrincipalId,
        published_at: Timestamp,
        visibility: Visibility,
    ) -> Result<StoreEntry, StoreError> {
        if !is_valid_label(topic) {
            return Err(StoreError::BadTopic(topic.to_string()));
        }
        let mut g = self.inner.lock().unwrap();
        let entry = StoreEntry { seq: g.next_seq, topic: topic.to_string(), cube, publisher, published_at, visibility };
        if let Some(path) = &self.log {
            let mut line = canon::encode(&entry);
            line.push(b'\n');
            let mut f = fs::OpenOptions::new()
                .append(true)
                .create(true)
                .open(path)
                .map_err(|e| StoreError::Io(e.to_string()))?;
            f.write_all(&line).map_err(|e| StoreError::Io(e.to_string()))?;
        }
        g.next_seq += 1;
        g.topics.entry(entry.topic.clone()).or_default().push(entry.clone());
        Ok(entry)
    }

    /// Entries of `topic` published at or after `since`, in append order,
    /// restricted to what `reader` may see.
    pub fn subscribe(&self, topic: &str, since: Timestamp, reader: &PrincipalId) -> Vec<StoreEntry> {
        let g = self.inner.lock().unwrap();
        g.topics
            .get(topic)
            .map(|es| {
                es.iter()
                    .filter(|e| e.published_at >= since)
                    .filter(|e| {
                        e.visibility == Visibility::Public
                            || decide_access(reader, &e.cube.governance, Action::Read).is_allowed()
                    })
                    .cloned()
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Entries after `after_seq`, for polling consumers.
    pub fn poll(&self, topic: &str, after_seq: u64, reader: &PrincipalId) -> Vec<StoreEntry> {
        self.subscribe(topic, 0, reader).into_iter().filter(|e| e.seq > after_seq).collect()
    }

    pub fn topics(&self) -> Vec<String> {
        self.inner.lock().unwrap().topics.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().topics.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
