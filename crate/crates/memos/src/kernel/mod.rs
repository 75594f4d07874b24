//! The memory kernel: vault, indexes, hot cache and store behind one API.
//!
//! Every API call runs inside a [`Tx`]: reads come from the backend (or the
//! transaction's own staged rows), writes are staged, and commit checks head
//! version and revision of every touched row under the vault lock before
//! writing. A single call is a one-op transaction; a transactional pipeline
//! shares one across all nodes.

mod ops;
mod tx;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use memos_core::context::{InjectionContext, MockModel, ModelAdapter, ModelResponse};
use memos_core::governance::{AuditAction, AuditDraft, AuditRecord, Outcome};
use memos_core::lifecycle::{LifecycleError, LifecycleState, VersionCause};
use memos_core::mip::{MipError, MipVersion, SignatureStatus};
use memos_core::operator::{GraphError, OperatorError, OperatorIndex, PartitionPath};
use memos_core::reader::{NodeId, ParseError, PipelineError};
use memos_core::scheduler::{HotCache, PayloadTranscoder, StubTranscoder, TransformKind, TransformationRule};
use memos_core::{
    canon, AclEntry, Action, CubeError, CubeId, Decay, MemCube, Origin, PrincipalId, SemanticType,
    Sensitivity, Timestamp,
};
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, CubeRow, InMemoryBackend, StorageBackend};
use crate::store::MemStore;
use crate::vault::{Vault, VaultError};

pub use ops::NewCube;
pub(crate) use tx::Tx;

// ------------------------------------------------------------------ errors

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("{principal} may not {action:?} {cube}")]
    AccessDenied { principal: PrincipalId, action: Action, cube: CubeId },
    #[error("unknown cube {0}")]
    UnknownCube(CubeId),
    #[error("cube {0} already exists")]
    AlreadyExists(CubeId),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error(transparent)]
    Transform(#[from] memos_core::scheduler::TransformError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Mip(#[from] MipError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("version conflict on {0}")]
    VersionConflict(CubeId),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("restricted cube {0} cannot be published")]
    RestrictedUnpublishable(CubeId),
    #[error("{0} key not configured")]
    KeyMissing(&'static str),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("node {node} failed: {cause}")]
    NodeFailed { node: NodeId, cause: Box<KernelError> },
    #[error("injected fault")]
    InjectedFault,
    #[error("stored audit chain broken at seq {0}")]
    AuditBroken(u64),
}

impl KernelError {
    /// Stable error name used by the service and the CLI.
    pub fn code(&self) -> &'static str {
        use memos_core::mip::MipError as M;
        match self {
            KernelError::AccessDenied { .. } => "AccessDenied",
            KernelError::UnknownCube(_) => "UnknownCube",
            KernelError::AlreadyExists(_) => "AlreadyExists",
            KernelError::Lifecycle(LifecycleError::IllegalTransition { .. }) => "IllegalTransition",
            KernelError::Lifecycle(LifecycleError::UnknownVersion(_)) => "UnknownVersion",
            KernelError::Lifecycle(LifecycleError::MergeIntoSelf) => "MergeIntoSelf",
            KernelError::Lifecycle(LifecycleError::Cube(_)) | KernelError::Cube(_) => "InvalidCube",
            KernelError::Transform(_) => "TransformerFailure",
            KernelError::Operator(OperatorError::MalformedTagExpression(_)) => "MalformedTagExpression",
            KernelError::Operator(_) => "InvalidPartitionPath",
            KernelError::Graph(GraphError::CycleRejected) => "CycleRejected",
            KernelError::Graph(GraphError::SelfLoop) => "SelfLoop",
            KernelError::Graph(_) => "GraphError",
            KernelError::Mip(e) => match e {
                M::BadMagic => "BadMagic",
                M::Malformed(_) => "Malformed",
                M::VersionIncompatible { .. } => "VersionIncompatible",
                M::Truncated { .. } => "Truncated",
                M::DigestMismatch(_) => "DigestMismatch",
                M::CountMismatch { .. } => "CountMismatch",
                M::InvalidEntry { .. } => "InvalidEntry",
                M::SignatureInvalid => "SignatureInvalid",
                M::TrustRejected => "TrustRejected",
                M::RestrictedUnsigned(_) => "RestrictedUnsigned",
            },
            KernelError::Pipeline(PipelineError::CycleDetected) => "CycleDetected",
            KernelError::Pipeline(PipelineError::BindingTypeMismatch { .. }) => "BindingTypeMismatch",
            KernelError::Pipeline(_) => "InvalidPipeline",
            KernelError::Parse(_) => "ParseError",
            KernelError::VersionConflict(_) => "VersionConflict",
            KernelError::Backend(_) => "BackendFailure",
            KernelError::RestrictedUnpublishable(_) => "RestrictedUnpublishable",
            KernelError::KeyMissing(_) => "KeyMissing",
            KernelError::InvalidRequest(_) => "InvalidRequest",
            KernelError::NodeFailed { .. } => "NodeFailed",
            KernelError::InjectedFault => "InjectedFault",
            KernelError::AuditBroken(_) => "AuditBroken",
        }
    }

    /// The innermost cause of a pipeline failure.
    pub fn root(&self) -> &KernelError {
        match self {
            KernelError::NodeFailed { cause, .. } => cause.root(),
            e => e,
        }
    }
}

impl From<VaultError> for KernelError {
    fn from(e: VaultError) -> Self {
        match e {
            VaultError::AccessDenied { principal, action, cube } => KernelError::AccessDenied { principal, action, cube },
            VaultError::VersionConflict(id) => KernelError::VersionConflict(id),
            VaultError::Backend(b) => KernelError::Backend(b.to_string()),
            VaultError::AuditBroken(s) => KernelError::AuditBroken(s),
        }
    }
}

impl From<BackendError> for KernelError {
    fn from(e: BackendError) -> Self {
        VaultError::from(e).into()
    }
}

// ------------------------------------------------------------------ config

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ClockMode {
    System,
    /// Time only moves when [`Kernel::set_time`] / [`Kernel::advance`] is called.
    Manual { start: Timestamp },
    /// `max(start, last audit timestamp + step)`: deterministic across
    /// processes that replay the same operations.
    Logical { start: Timestamp, step: u64 },
}

#[derive(Debug, Clone)]
pub struct KernelConfig {
    pub seed: u64,
    pub cache_capacity: usize,
    pub token_budget: u64,
    pub default_k: usize,
    pub min_score: f64,
    pub rules: Vec<TransformationRule>,
    /// Principals allowed to read the whole audit log and run sweeps.
    pub admins: BTreeSet<PrincipalId>,
    pub watermark_key: Option<Vec<u8>>,
    pub mip_key: Option<Vec<u8>>,
    pub clock: ClockMode,
    pub conflict_retries: u32,
    pub default_partition: PartitionPath,
    /// Record every cache touch for trace replay.
    pub trace_cache: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            seed: 0,
            cache_capacity: 64,
            token_budget: 512,
            default_k: memos_core::reader::DEFAULT_K,
            min_score: 0.0,
            rules: TransformationRule::defaults(),
            admins: [PrincipalId::new("admin").unwrap()].into(),
            watermark_key: None,
            mip_key: None,
            clock: ClockMode::System,
            conflict_retries: 16,
            default_partition: PartitionPath::new("default").unwrap(),
            trace_cache: false,
        }
    }
}

// ----------------------------------------------------------------- session

/// The caller of one request; collects the audit seqs it produced.
#[derive(Debug)]
pub struct Session {
    pub principal: PrincipalId,
    seqs: Mutex<Vec<u64>>,
}

impl Session {
    pub fn new(principal: PrincipalId) -> Self {
        Session { principal, seqs: Mutex::new(Vec::new()) }
    }

    pub fn named(name: &str) -> Result<Self, memos_core::ids::IdError> {
        Ok(Self::new(PrincipalId::new(name)?))
    }

    pub fn seqs(&self) -> Vec<u64> {
        self.seqs.lock().unwrap().clone()
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.seqs.lock().unwrap().last().copied()
    }

    fn push(&self, seq: u64) {
        self.seqs.lock().unwrap().push(seq);
    }
}

// ------------------------------------------------------------- api types

/// A cube as returned to callers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeInfo {
    pub cube: MemCube,
    pub state: LifecycleState,
    pub partition: PartitionPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Written {
    pub id: CubeId,
    pub version: u64,
    pub state: LifecycleState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallHit {
    pub cube_id: CubeId,
    pub version: u64,
    pub score: f64,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recall {
    pub hits: Vec<RecallHit>,
    pub context: InjectionContext,
    pub response: ModelResponse,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecallQuery {
    pub text: String,
    pub labels: BTreeSet<String>,
    pub k: Option<usize>,
    /// Tag expression over labels.
    pub structural: Option<String>,
    /// Partition prefix; empty means everywhere.
    pub scope: String,
    pub budget: Option<u64>,
}

/// One step of a provenance chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageHop {
    pub cube_id: CubeId,
    pub version: u64,
    pub origin: Origin,
    pub origin_detail: String,
    pub cause: VersionCause,
    pub committed_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformOutcome {
    pub source: CubeId,
    pub created: Option<CubeId>,
    pub kind: Option<TransformKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub ok: bool,
    pub records: u64,
    pub first_bad: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub ids: Vec<CubeId>,
    pub signature: SignatureStatus,
    pub minor_version_warning: Option<MipVersion>,
    pub producer: PrincipalId,
}

/// Field changes for [`Kernel::update`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdatePatch {
    pub text: Option<String>,
    pub labels: Option<BTreeSet<String>>,
    pub semantic_type: Option<SemanticType>,
}

impl From<memos_core::reader::Patch> for UpdatePatch {
    fn from(p: memos_core::reader::Patch) -> Self {
        UpdatePatch { text: p.text, labels: p.labels, semantic_type: p.semantic_type }
    }
}

/// Governance fields a caller may set at creation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GovernanceSpec {
    pub acl: Vec<AclEntry>,
    pub sensitivity: Option<Sensitivity>,
    pub ttl_s: Option<u64>,
    pub decay: Option<Decay>,
    pub priority: Option<u8>,
}

/// Kernel-wide counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelStats {
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub transforms: BTreeMap<String, u64>,
    pub expired: u64,
    pub commits: u64,
    pub conflicts: u64,
}

// ------------------------------------------------------------------ kernel

pub struct Kernel {
    vault: Vault,
    index: RwLock<OperatorIndex>,
    cache: Mutex<HotCache>,
    store: MemStore,
    config: KernelConfig,
    manual_time: AtomicU64,
    stats: Mutex<KernelStats>,
    cache_trace: Mutex<Vec<CubeId>>,
    model: Box<dyn ModelAdapter + Send + Sync>,
    transcoder: Box<dyn PayloadTranscoder + Send + Sync>,
}

/// Audit action used for lifecycle intents.
fn intent_action(event: &str) -> AuditAction {
    match event {
        "Activate" => AuditAction::Create,
        "Freeze" | "Unfreeze" => AuditAction::Govern,
        "Expire" => AuditAction::Expire,
        _ => AuditAction::Update,
    }
}

impl Kernel {
    pub fn open(backend: Box<dyn StorageBackend>, config: KernelConfig) -> Result<Self, KernelError> {
        Self::open_with_store(backend, config, MemStore::in_memory())
    }

    pub fn open_with_store(
        backend: Box<dyn StorageBackend>,
        config: KernelConfig,
        store: MemStore,
    ) -> Result<Self, KernelError> {
        let vault = Vault::open(backend)?;
        let mut index = OperatorIndex::new();
        let mut rows = Vec::new();
        for id in vault.backend().ids()? {
            if let Some(row) = vault.backend().load(id)? {
                if row.state().is_terminal() {
                    index.graph_mut().add_node(id);
                } else {
                    index.upsert(&row.head(), row.partition.clone());
                }
                rows.push(row);
            }
        }
        for row in &rows {
            if let memos_core::lifecycle::Genesis::Transformed { from, .. } = row.record.genesis_cause() {
                let _ = index.graph_mut().link(row.id(), memos_core::operator::Relation::DerivedFrom, from);
            }
        }
        let cache = HotCache::new(config.cache_capacity.max(1)).expect("capacity >= 1");
        let start = match config.clock {
            ClockMode::Manual { start } => start,
            _ => 0,
        };
        Ok(Kernel {
            vault,
            index: RwLock::new(index),
            cache: Mutex::new(cache),
            store,
            manual_time: AtomicU64::new(start),
            stats: Mutex::new(KernelStats::default()),
            cache_trace: Mutex::new(Vec::new()),
            model: Box::new(MockModel),
            transcoder: Box::new(StubTranscoder),
            config,
        })
    }

    pub fn in_memory(config: KernelConfig) -> Self {
        Self::open(Box::new(InMemoryBackend::new()), config).expect("empty vault opens")
    }

    pub fn with_model(mut self, model: Box<dyn ModelAdapter + Send + Sync>) -> Self {
        self.model = model;
        self
    }

    pub fn with_transcoder(mut self, t: Box<dyn PayloadTranscoder + Send + Sync>) -> Self {
        self.transcoder = t;
        self
    }

    /// Independent in-memory copy of the whole kernel: rows, audit log,
    /// indexes, cache, clock and id stream.
    pub fn fork(&self) -> Result<Kernel, KernelError> {
        let backend = InMemoryBackend::fork(self.vault.backend())?;
        let k = Kernel {
            vault: Vault::open(Box::new(backend))?,
            index: RwLock::new(self.index.read().unwrap().clone()),
            cache: Mutex::new(self.cache.lock().unwrap().clone()),
            store: MemStore::in_memory(),
            config: self.config.clone(),
            manual_time: AtomicU64::new(self.manual_time.load(Ordering::SeqCst)),
            stats: Mutex::new(self.stats.lock().unwrap().clone()),
            cache_trace: Mutex::new(self.cache_trace.lock().unwrap().clone()),
            model: Box::new(MockModel),
            transcoder: Box::new(StubTranscoder),
        };
        Ok(k)
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn vault(&self) -> &Vault {
        &self.vault
    }

    pub fn backend(&self) -> &dyn StorageBackend {
        self.vault.backend()
    }

    pub fn store(&self) -> &MemStore {
        &self.store
    }

    pub fn now(&self) -> Timestamp {
        match self.config.clock {
            ClockMode::System => SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64),
            ClockMode::Manual { .. } => self.manual_time.load(Ordering::SeqCst),
            ClockMode::Logical { start, step } => self.vault.last_audit_at().map_or(start, |t| (t + step).max(start)),
        }
    }

    /// Moves a manual clock forward (never backwards).
    pub fn set_time(&self, t: Timestamp) {
        self.manual_time.fetch_max(t, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: u64) -> Timestamp {
        self.manual_time.fetch_add(ms, Ordering::SeqCst) + ms
    }

    pub fn stats(&self) -> KernelStats {
        self.stats.lock().unwrap().clone()
    }

    pub fn cache_trace(&self) -> Vec<CubeId> {
        self.cache_trace.lock().unwrap().clone()
    }

    pub fn cache_residents(&self) -> Vec<CubeId> {
        self.cache.lock().unwrap().most_recent_first()
    }

    pub fn is_admin(&self, p: &PrincipalId) -> bool {
        self.config.admins.contains(p)
    }

    pub(crate) fn respond(&self, prompt: &str, ctx: &InjectionContext) -> ModelResponse {
        self.model.respond(prompt, ctx)
    }

    pub(crate) fn transcoder(&self) -> &dyn PayloadTranscoder {
        &*self.transcoder
    }

    /// Deterministic id candidate `n` at the current audit head. Processes
    /// replaying the same operations draw the same ids.
    pub(crate) fn id_candidate(&self, n: u64) -> CubeId {
        let head = self.vault.audit_head();
        let d = canon::sha256_parts(&[
            b"memos-id",
            &self.config.seed.to_be_bytes(),
            &head.next_seq.to_be_bytes(),
            &head.last_hash,
            &n.to_be_bytes(),
        ]);
        let mut b = [0u8; 16];
        b.copy_from_slice(&d[..16]);
        CubeId(u128::from_be_bytes(b).max(1))
    }

    /// Appends one record on behalf of `s`.
    pub(crate) fn audit(
        &self,
        s: &Session,
        action: AuditAction,
        cube: CubeId,
        outcome: Outcome,
        detail: impl Into<String>,
    ) -> Result<AuditRecord, KernelError> {
        let rec = self.vault.append_audit(AuditDraft {
            at: self.now(),
            principal: s.principal.clone(),
            action,
            cube_id: cube,
            outcome,
            detail: detail.into(),
        })?;
        s.push(rec.seq);
        Ok(rec)
    }

    /// Access check that always leaves an audit record.
    pub(crate) fn check(
        &self,
        s: &Session,
        row: &CubeRow,
        action: Action,
        audit_action: AuditAction,
        detail: &str,
    ) -> Result<(), KernelError> {
        let (d, rec) = self.vault.check_access(
            &s.principal,
            &row.governance,
            row.id(),
            action,
            audit_action,
            self.now(),
            detail.to_string(),
        )?;
        s.push(rec.seq);
        if d.is_allowed() {
            Ok(())
        } else {
            Err(KernelError::AccessDenied { principal: s.principal.clone(), action, cube: row.id() })
        }
    }

    pub(crate) fn audit_intents(
        &self,
        s: &Session,
        intents: Vec<memos_core::lifecycle::TransitionIntent>,
    ) -> Result<(), KernelError> {
        for i in intents {
            self.audit(
                s,
                intent_action(i.event),
                i.cube_id,
                Outcome::Allowed,
                format!("{} {}->{} v{}", i.event, i.from, i.to, i.head_version),
            )?;
        }
        Ok(())
    }

    /// Runs `f` in a fresh transaction and commits, retrying on conflicts.
    pub(crate) fn run<T>(&self, f: impl Fn(&mut Tx<'_>) -> Result<T, KernelError>) -> Result<T, KernelError> {
        let mut attempt = 0;
        loop {
            let mut tx = Tx::new(self);
            let value = f(&mut tx)?;
            match tx.commit() {
                Ok(()) => return Ok(value),
                Err(KernelError::VersionConflict(_)) if attempt < self.config.conflict_retries => {
                    self.stats.lock().unwrap().conflicts += 1;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn audit_records(&self) -> Result<Vec<AuditRecord>, KernelError> {
        Ok(self.backend().audit_records()?)
    }

    pub fn verify_audit(&self) -> AuditVerdict {
        match self.vault.verify() {
            Ok(n) => AuditVerdict { ok: true, records: n as u64, first_bad: None },
            Err(s) => AuditVerdict { ok: false, records: self.vault.audit_len(), first_bad: Some(s) },
        }
    }

    /// Canonical bytes of all cube rows (audit excluded).
    pub fn state_snapshot(&self) -> Result<Vec<u8>, KernelError> {
        Ok(self.backend().state_snapshot()?)
    }

    /// Live index content equals a rebuild from stored rows.
    pub fn index_consistent(&self) -> Result<bool, KernelError> {
        let mut rows = Vec::new();
        for id in self.backend().ids()? {
            rows.extend(self.backend().load(id)?);
        }
        let heads: Vec<(MemCube, PartitionPath)> = rows
            .iter()
            .filter(|r| !r.state().is_terminal())
            .map(|r| (r.head(), r.partition.clone()))
            .collect();
        let rebuilt = OperatorIndex::rebuild(heads.iter().map(|(c, p)| (c, p.clone())));
        Ok(self.index.read().unwrap().same_contents(&rebuilt))
    }

    /// Every stored history is dense and fingerprint-consistent.
    pub fn histories_dense(&self) -> Result<Result<(), String>, KernelError> {
        for id in self.backend().ids()? {
            if let Some(row) = self.backend().load(id)? {
                if let Err(e) = row.record.check_history() {
                    return Ok(Err(format!("{id}: {e}")));
                }
            }
        }
        Ok(Ok(()))
    }
}
