//! The vault: a backend plus access checks, compare-and-set commits and the
//! hash-chained audit log.

use std::sync::Mutex;

use memos_core::governance::{
    decide_access, verify_audit_log, AccessDecision, AuditAction, AuditDraft, AuditRecord, ChainHead, Outcome,
};
use memos_core::{Action, CubeId, GovernanceAttrs, PrincipalId, Timestamp};

use crate::backend::{BackendError, CubeRow, StorageBackend};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VaultError {
    #[error("{principal} may not {action:?} {cube}")]
    AccessDenied { principal: PrincipalId, action: Action, cube: CubeId },
    #[error("version conflict on {0}")]
    VersionConflict(CubeId),
    #[error("backend failure: {0}")]
    Backend(BackendError),
    #[error("stored audit chain broken at seq {0}")]
    AuditBroken(u64),
}

impl From<BackendError> for VaultError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Conflict { id, .. } => VaultError::VersionConflict(id),
            other => VaultError::Backend(other),
        }
    }
}

/// What a staged write expects to find at commit time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    Absent,
    At { head: u64, rev: u64 },
}

impl Expect {
    pub fn of(row: Option<&CubeRow>) -> Self {
        row.map_or(Expect::Absent, |r| Expect::At { head: r.head_version(), rev: r.rev })
    }

    fn head(self) -> u64 {
        match self {
            Expect::Absent => 0,
            Expect::At { head, .. } => head,
        }
    }
}

struct AuditState {
    head: ChainHead,
    last_at: Option<Timestamp>,
}

pub struct Vault {
    backend: Box<dyn StorageBackend>,
    audit: Mutex<AuditState>,
    commit: Mutex<()>,
}

impl Vault {
    /// Opens over `backend`, refusing a stored log that does not verify.
    pub fn open(backend: Box<dyn StorageBackend>) -> Result<Self, VaultError> {
        let bytes = backend.audit_bytes()?;
        verify_audit_log(&bytes).map_err(VaultError::AuditBroken)?;
        let last = backend.audit_records()?.pop();
        let state = AuditState {
            head: last.as_ref().map(ChainHead::after).unwrap_or_default(),
            last_at: last.map(|r| r.at),
        };
        Ok(Vault { backend, audit: Mutex::new(state), commit: Mutex::new(()) })
    }

    pub fn backend(&self) -> &dyn StorageBackend {
        &*self.backend
    }

    pub fn append_audit(&self, draft: AuditDraft) -> Result<AuditRecord, VaultError> {
        let mut g = self.audit.lock().unwrap();
        let mut next = g.head;
        let rec = next.append(draft);
        self.backend.append_audit(&rec)?;
        g.head = next;
        g.last_at = Some(rec.at);
        Ok(rec)
    }

    /// Timestamp of the newest audit record.
    pub fn last_audit_at(&self) -> Option<Timestamp> {
        self.audit.lock().unwrap().last_at
    }

    pub fn audit_head(&self) -> ChainHead {
        self.audit.lock().unwrap().head
    }

    pub fn audit_len(&self) -> u64 {
        self.audit.lock().unwrap().head.next_seq - 1
    }

    /// Decides and always records the decision.
    #[allow(clippy::too_many_arguments)]
    pub fn check_access(
        &self,
        principal: &PrincipalId,
        governance: &GovernanceAttrs,
        cube: CubeId,
        action: Action,
        audit_action: AuditAction,
        at: Timestamp,
        detail: String,
    ) -> Result<(AccessDecision, AuditRecord), VaultError> {
        let decision = decide_access(principal, governance, action);
        let detail = match decision {
            AccessDecision::Allowed => detail,
            AccessDecision::Denied(r) => format!("denied {action:?} ({r:?}): {detail}"),
        };
        let outcome = if decision.is_allowed() { Outcome::Allowed } else { Outcome::Denied };
        let rec = self.append_audit(AuditDraft {
            at,
            principal: principal.clone(),
            action: audit_action,
            cube_id: cube,
            outcome,
            detail,
        })?;
        Ok((decision, rec))
    }

    /// Single-row compare-and-set write guarded by a Write check against the
    /// stored governance (or the new row's, for a first write).
    pub fn vault_put(
        &self,
        principal: &PrincipalId,
        row: &CubeRow,
        expected_head: u64,
        at: Timestamp,
    ) -> Result<u64, VaultError> {
        let _g = self.commit.lock().unwrap();
        let current = self.backend.load(row.id())?;
        let gov = current.as_ref().map_or(&row.governance, |c| &c.governance);
        let (d, _) = self.check_access(
            principal,
            gov,
            row.id(),
            Action::Write,
            AuditAction::Update,
            at,
            format!("put v{} expecting {expected_head}", row.head_version()),
        )?;
        if !d.is_allowed() {
            return Err(VaultError::AccessDenied { principal: principal.clone(), action: Action::Write, cube: row.id() });
        }
        Ok(self.backend.put(row, expected_head)?)
    }

    /// Atomically applies a batch: every expectation is checked before any
    /// row is written.
    pub fn commit(&self, batch: &[(CubeRow, Expect)]) -> Result<(), VaultError> {
        self.commit_with(batch, || ())
    }

    /// [`Vault::commit`], running `after` under the commit lock once every
    /// row is written, so derived structures update in commit order.
    pub fn commit_with<T>(&self, batch: &[(CubeRow, Expect)], after: impl FnOnce() -> T) -> Result<T, VaultError> {
        let _g = self.commit.lock().unwrap();
        for (row, expect) in batch {
            let found = self.backend.load(row.id())?;
            if Expect::of(found.as_ref()) != *expect {
                return Err(VaultError::VersionConflict(row.id()));
            }
        }
        for (row, expect) in batch {
            self.backend.put(row, expect.head())?;
        }
        Ok(after())
    }

    pub fn verify(&self) -> Result<usize, u64> {
        match self.backend.audit_bytes() {
            Ok(b) => verify_audit_log(&b),
            Err(_) => Err(1),
        }
    }
}
