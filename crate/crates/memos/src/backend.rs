//! Storage backends for the vault.
//!
//! A backend stores one [`CubeRow`] per cube plus the append-only audit log.
//! `put` is a compare-and-set on the head version: a stale expectation fails
//! without touching storage.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use memos_core::canon;
use memos_core::governance::AuditRecord;
use memos_core::lifecycle::{LifecycleRecord, LifecycleState, VersionCause, VersionEntry};
use memos_core::operator::PartitionPath;
use memos_core::{BehavioralIndicators, CubeId, GovernanceAttrs, MemCube, Timestamp};
use serde::{Deserialize, Serialize};

/// Everything the vault knows about one cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeRow {
    pub record: LifecycleRecord,
    pub governance: GovernanceAttrs,
    pub behavioral: BehavioralIndicators,
    pub partition: PartitionPath,
    /// Bumped on every write, including state-only changes.
    pub rev: u64,
}

impl CubeRow {
    pub fn id(&self) -> CubeId {
        self.record.cube_id
    }

    pub fn head_version(&self) -> u64 {
        self.record.head_version
    }

    pub fn state(&self) -> LifecycleState {
        self.record.state
    }

    /// The head cube with current runtime attributes.
    pub fn head(&self) -> MemCube {
        self.record.cube_at(None, &self.governance, &self.behavioral).expect("head always exists")
    }

    pub fn at(&self, version: u64) -> Option<MemCube> {
        self.record.cube_at(Some(version), &self.governance, &self.behavioral)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("head of {id} is {found}, expected {expected}")]
    Conflict { id: CubeId, expected: u64, found: u64 },
    #[error("io: {0}")]
    Io(String),
    #[error("corrupt storage: {0}")]
    Corrupt(String),
}

impl From<std::io::Error> for BackendError {
    fn from(e: std::io::Error) -> Self {
        BackendError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ListFilter {
    /// Cubes must carry every one of these labels.
    pub labels: BTreeSet<String>,
    /// Partition prefix, segment-aware.
    pub partition: Option<String>,
    /// Skip Expired and Merged cubes.
    pub live_only: bool,
}

impl ListFilter {
    pub fn matches(&self, row: &CubeRow) -> bool {
        self.labels.is_subset(&row.record.head().descriptive.labels)
            && self.partition.as_deref().is_none_or(|p| row.partition.within(p))
            && !(self.live_only && row.state().is_terminal())
    }
}

pub trait StorageBackend: Send + Sync {
    fn name(&self) -> &'static str;

    fn load(&self, id: CubeId) -> Result<Option<CubeRow>, BackendError>;

    /// Stores `row` if the current head (0 when absent) equals
    /// `expected_head`. Returns the new head version.
    fn put(&self, row: &CubeRow, expected_head: u64) -> Result<u64, BackendError>;

    fn delete(&self, id: CubeId) -> Result<bool, BackendError>;

    /// All stored ids, ascending.
    fn ids(&self) -> Result<Vec<CubeId>, BackendError>;

    fn append_audit(&self, record: &AuditRecord) -> Result<(), BackendError>;

    /// The serialized audit log: one canonical record per line.
    fn audit_bytes(&self) -> Result<Vec<u8>, BackendError>;

    fn head_of(&self, id: CubeId) -> Result<u64, BackendError> {
        Ok(self.load(id)?.map_or(0, |r| r.head_version()))
    }

    fn get(&self, id: CubeId, version: Option<u64>) -> Result<Option<MemCube>, BackendError> {
        Ok(self.load(id)?.and_then(|row| match version {
            None => Some(row.head()),
            Some(v) => row.at(v),
        }))
    }

    fn list(&self, filter: &ListFilter) -> Result<Vec<CubeId>, BackendError> {
        let mut out = Vec::new();
        for id in self.ids()? {
            if self.load(id)?.is_some_and(|r| filter.matches(&r)) {
                out.push(id);
            }
        }
        Ok(out)
    }

    fn audit_records(&self) -> Result<Vec<AuditRecord>, BackendError> {
        let bytes = self.audit_bytes()?;
        bytes
            .split(|b| *b == b'\n')
            .filter(|l| !l.is_empty())
            .enumerate()
            .map(|(i, l)| AuditRecord::from_line(l).map_err(|e| BackendError::Corrupt(format!("audit line {}: {e}", i + 1))))
            .collect()
    }

    /// Canonical bytes of every cube row, ascending by id. The audit log is
    /// not part of the state snapshot.
    fn state_snapshot(&self) -> Result<Vec<u8>, BackendError> {
        let mut rows = Vec::new();
        for id in self.ids()? {
            rows.extend(self.load(id)?);
        }
        Ok(canon::encode(&rows))
    }
}

// ------------------------------------------------------------------ memory

#[derive(Default)]
struct MemInner {
    rows: BTreeMap<CubeId, CubeRow>,
    audit: Vec<u8>,
}

#[derive(Default)]
pub struct InMemoryBackend {
    inner: Mutex<MemInner>,
}

impl InMemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Independent copy of the current contents.
    pub fn fork(source: &dyn StorageBackend) -> Result<Self, BackendError> {
        let me = Self::new();
        {
            let mut g = me.inner.lock().unwrap();
            for id in source.ids()? {
                if let Some(row) = source.load(id)? {
                    g.rows.insert(id, row);
                }
            }
            g.audit = source.audit_bytes()?;
        }
        Ok(me)
    }
}

impl StorageBackend for InMemoryBackend {
    fn name(&self) -> &'static str {
        "memory"
    }

    fn load(&self, id: CubeId) -> Result<Option<CubeRow>, BackendError> {
        Ok(self.inner.lock().unwrap().rows.get(&id).cloned())
    }

    fn put(&self, row: &CubeRow, expected_head: u64) -> Result<u64, BackendError> {
        let mut g = self.inner.lock().unwrap();
        let found = g.rows.get(&row.id()).map_or(0, |r| r.head_version());
        if found != expected_head {
            return Err(BackendError::Conflict { id: row.id(), expected: expected_head, found });
        }
        g.rows.insert(row.id(), row.clone());
        Ok(row.head_version())
    }

    fn delete(&self, id: CubeId) -> Result<bool, BackendError> {
        Ok(self.inner.lock().unwrap().rows.remove(&id).is_some())
    }

    fn ids(&self) -> Result<Vec<CubeId>, BackendError> {
        Ok(self.inner.lock().unwrap().rows.keys().copied().collect())
    }

    fn append_audit(&self, record: &AuditRecord) -> Result<(), BackendError> {
        let mut g = self.inner.lock().unwrap();
        g.audit.extend(record.to_line());
        g.audit.push(b'\n');
        Ok(())
    }

    fn audit_bytes(&self) -> Result<Vec<u8>, BackendError> {
        Ok(self.inner.lock().unwrap().audit.clone())
    }
}

// --------------------------------------------------------------- file tree

/// Per-cube sidecar: everything not held in the version files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    state: LifecycleState,
    history: Vec<VersionMeta>,
    governance: GovernanceAttrs,
    behavioral: BehavioralIndicators,
    partition: PartitionPath,
    rev: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VersionMeta {
    version: u64,
    committed_at: Timestamp,
    cause: VersionCause,
}

/// Directory layout:
///
/// ```text
/// <root>/cubes/<id>/v<N>.cube   canonical cube as committed at version N
/// <root>/cubes/<id>/state       lifecycle state, version causes, runtime attributes
/// <root>/cubes/<id>/head        head version, decimal; written last
/// <root>/audit.log              one canonical audit record per line
/// ```
pub struct FileTreeBackend {
    root: PathBuf,
    write: Mutex<()>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BackendError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl FileTreeBackend {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let root = root.into();
        fs::create_dir_all(root.join("cubes"))?;
        let log = root.join("audit.log");
        if !log.exists() {
            fs::write(&log, b"")?;
        }
        Ok(FileTreeBackend { root, write: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: CubeId) -> PathBuf {
        self.root.join("cubes").join(id.to_string())
    }

    fn read_head(&self, id: CubeId) -> Result<u64, BackendError> {
        match fs::read_to_string(self.dir(id).join("head")) {
            Ok(s) => s.trim().parse().map_err(|_| BackendError::Corrupt(format!("head of {id}: {s:?}"))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(0),
            Err(e) => Err(e.into()),
        }
    }
}

impl StorageBackend for FileTreeBackend {
    fn name(&self) -> &'static str {
        "filetree"
    }

    fn head_of(&self, id: CubeId) -> Result<u64, BackendError> {
        self.read_head(id)
    }

    fn load(&self, id: CubeId) -> Result<Option<CubeRow>, BackendError> {
        let head = self.read_head(id)?;
        if head == 0 {
            return Ok(None);
        }
        let dir = self.dir(id);
        let corrupt = |what: &str, e: &dyn std::fmt::Display| BackendError::Corrupt(format!("{id} {what}: {e}"));
        let side: Sidecar = canon::decode_strict(&fs::read(dir.join("state"))?).map_err(|e| corrupt("state", &e))?;
        let mut versions = Vec::with_capacity(side.history.len());
        for m in &side.history {
            let bytes = fs::read(dir.join(format!("v{}.cube", m.version)))?;
            let c = MemCube::canonical_decode(&bytes).map_err(|e| corrupt("version file", &e))?;
            if c.id != id || c.version != m.version {
                return Err(corrupt("version file", &"identity mismatch"));
            }
            versions.push(VersionEntry {
                version: c.version,
                fingerprint: c.fingerprint,
                descriptive: c.descriptive,
                payload: c.payload,
                committed_at: m.committed_at,
                cause: m.cause,
            });
        }
        let record = LifecycleRecord { cube_id: id, state: side.state, versions, head_version: head };
        Ok(Some(CubeRow {
            record,
            governance: side.governance,
            behavioral: side.behavioral,
            partition: side.partition,
            rev: side.rev,
        }))
    }

    fn put(&self, row: &CubeRow, expected_head: u64) -> Result<u64, BackendError> {
        let _g = self.write.lock().unwrap();
        let id = row.id();
        let found = self.read_head(id)?;
        if found != expected_head {
            return Err(BackendError::Conflict { id, expected: expected_head, found });
        }
        let dir = self.dir(id);
        fs::create_dir_all(&dir)?;
        // committed versions are immutable; only new ones are written
        for v in row.record.versions.iter().filter(|v| v.version > found) {
            let cube = row.at(v.version).expect("version present");
            write_atomic(&dir.join(format!("v{}.cube", v.version)), &cube.canonical_encode())?;
        }
        let side = Sidecar {
            state: row.state(),
            history: row
                .record
                .versions
                .iter()
                .map(|v| VersionMeta { version: v.version, committed_at: v.committed_at, cause: v.cause })
                .collect(),
            governance: row.governance.clone(),
            behavioral: row.behavioral.clone(),
            partition: row.partition.clone(),
            rev: row.rev,
        };
        write_atomic(&dir.join("state"), &canon::encode(&side))?;
        write_atomic(&dir.join("head"), row.head_version().to_string().as_bytes())?;
        Ok(row.head_version())
    }

    fn delete(&self, id: CubeId) -> Result<bool, BackendError> {
        let _g = self.write.lock().unwrap();
        let dir = self.dir(id);
        if !dir.exists() {
            return Ok(false);
        }
        fs::remove_dir_all(dir)?;
        Ok(true)
    }

    fn ids(&self) -> Result<Vec<CubeId>, BackendError> {
        let mut out = Vec::new();
        for e in fs::read_dir(self.root.join("cubes"))? {
            let name = e?.file_name();
            let name = name.to_string_lossy();
            let id: CubeId = name.parse().map_err(|_| BackendError::Corrupt(format!("stray entry {name}")))?;
            if self.read_head(id)? > 0 {
                out.push(id);
            }
        }
        out.sort();
        Ok(out)
    }

    fn append_audit(&self, record: &AuditRecord) -> Result<(), BackendError> {
        let mut line = record.to_line();
        line.push(b'\n');
        let mut f = fs::OpenOptions::new().append(true).create(true).open(self.root.join("audit.log"))?;
        f.write_all(&line)?;
        Ok(())
    }

    fn audit_bytes(&self) -> Result<Vec<u8>, BackendError> {
        Ok(fs::read(self.root.join("audit.log"))?)
    }
}
