//! Access decisions, the hash-chained audit record and cube watermarks.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::canon::{self, b64_32, Digest};
use crate::ids::{CubeId, PrincipalId, Timestamp};
use crate::memcube::{AclSubject, Action, GovernanceAttrs, MemCube, Sensitivity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DenyReason {
    NotGranted,
    /// A wildcard entry would grant the action but the cube is Restricted.
    RestrictedWildcard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessDecision {
    Allowed,
    Denied(DenyReason),
}

impl AccessDecision {
    pub fn is_allowed(self) -> bool {
        self == AccessDecision::Allowed
    }
}

/// Owner holds every action. Otherwise a named entry or a `*` entry must
/// list the action, and `*` entries never apply to Restricted cubes.
pub fn decide_access(principal: &PrincipalId, gov: &GovernanceAttrs, action: Action) -> AccessDecision {
    if &gov.owner == principal {
        return AccessDecision::Allowed;
    }
    let mut blocked_wildcard = false;
    for entry in gov.acl.iter().filter(|e| e.actions.contains(&action)) {
        match &entry.subject {
            AclSubject::Principal(p) if p == principal => return AccessDecision::Allowed,
            AclSubject::Principal(_) => {}
            AclSubject::Anyone if gov.sensitivity == Sensitivity::Restricted => blocked_wildcard = true,
            AclSubject::Anyone => return AccessDecision::Allowed,
        }
    }
    AccessDecision::Denied(if blocked_wildcard {
        DenyReason::RestrictedWildcard
    } else {
        DenyReason::NotGranted
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AuditAction {
    Create,
    Read,
    Update,
    Schedule,
    Transform,
    Export,
    Import,
    Govern,
    Expire,
}

impl AuditAction {
    pub const ALL: [AuditAction; 9] = [
        AuditAction::Create,
        AuditAction::Read,
        AuditAction::Update,
        AuditAction::Schedule,
        AuditAction::Transform,
        AuditAction::Export,
        AuditAction::Import,
        AuditAction::Govern,
        AuditAction::Expire,
    ];
}

impl fmt::Display for AuditAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl core::str::FromStr for AuditAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AuditAction::ALL
            .into_iter()
            .find(|a| alloc::format!("{a}").eq_ignore_ascii_case(s))
            .ok_or_else(|| String::from(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Allowed,
    Denied,
}

/// Fields supplied by the caller; sequencing and hashing are added on append.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditDraft {
    pub at: Timestamp,
    pub principal: PrincipalId,
    pub action: AuditAction,
    pub cube_id: CubeId,
    pub outcome: Outcome,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRecord {
    pub seq: u64,
    pub at: Timestamp,
    pub principal: PrincipalId,
    pub action: AuditAction,
    pub cube_id: CubeId,
    pub outcome: Outcome,
    pub detail: String,
    #[serde(with = "b64_32")]
    pub prev_hash: Digest,
    #[serde(with = "b64_32")]
    pub this_hash: Digest,
}

#[derive(Serialize)]
struct Unsealed<'a> {
    seq: u64,
    at: Timestamp,
    principal: &'a PrincipalId,
    action: AuditAction,
    cube_id: CubeId,
    outcome: Outcome,
    detail: &'a str,
    #[serde(with = "b64_32")]
    prev_hash: Digest,
}

pub const GENESIS_HASH: Digest = [0u8; 32];

impl AuditRecord {
    /// `SHA-256(canonical(record without this_hash) || prev_hash)`.
    pub fn compute_hash(&self) -> Digest {
        let body = canon::encode(&Unsealed {
            seq: self.seq,
            at: self.at,
            principal: &self.principal,
            action: self.action,
            cube_id: self.cube_id,
            outcome: self.outcome,
            detail: &self.detail,
            prev_hash: self.prev_hash,
        });
        canon::sha256_parts(&[&body, &self.prev_hash])
    }

    pub fn seal(draft: AuditDraft, seq: u64, prev_hash: Digest) -> AuditRecord {
        let mut r = AuditRecord {
            seq,
            at: draft.at,
            principal: draft.principal,
            action: draft.action,
            cube_id: draft.cube_id,
            outcome: draft.outcome,
            detail: draft.detail,
            prev_hash,
            this_hash: [0; 32],
        };
        r.this_hash = r.compute_hash();
        r
    }

    /// The record's own hash is consistent with its content.
    pub fn is_self_consistent(&self) -> bool {
        self.compute_hash() == self.this_hash
    }

    /// One newline-free canonical line.
    pub fn to_line(&self) -> Vec<u8> {
        canon::encode(self)
    }

    pub fn from_line(line: &[u8]) -> Result<AuditRecord, canon::CanonError> {
        canon::decode_strict(line)
    }
}

/// Position of the next append.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainHead {
    pub next_seq: u64,
    pub last_hash: Digest,
}

impl Default for ChainHead {
    fn default() -> Self {
        ChainHead { next_seq: 1, last_hash: GENESIS_HASH }
    }
}

impl ChainHead {
    pub fn after(record: &AuditRecord) -> ChainHead {
        ChainHead { next_seq: record.seq + 1, last_hash: record.this_hash }
    }

    /// Seals `draft` at this position and advances.
    pub fn append(&mut self, draft: AuditDraft) -> AuditRecord {
        let r = AuditRecord::seal(draft, self.next_seq, self.last_hash);
        *self = ChainHead::after(&r);
        r
    }
}

/// In-memory audit log.
#[derive(Debug, Clone, Default)]
pub struct AuditChain {
    records: Vec<AuditRecord>,
    head: ChainHead,
}

impl AuditChain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append_audit(&mut self, draft: AuditDraft) -> &AuditRecord {
        let r = self.head.append(draft);
        self.records.push(r);
        self.records.last().expect("just pushed")
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Recomputes every link. Returns the position-based seq (1-based) of the
/// first record that fails, or `Ok` for an intact chain.
pub fn verify_audit_chain(records: &[AuditRecord]) -> Result<(), u64> {
    let mut prev = GENESIS_HASH;
    for (i, r) in records.iter().enumerate() {
        let pos = i as u64 + 1;
        if r.seq != pos || r.prev_hash != prev || r.compute_hash() != r.this_hash {
            return Err(pos);
        }
        prev = r.this_hash;
    }
    Ok(())
}

/// Verifies a newline-delimited log. Lines that do not decode canonically
/// count as failed records.
pub fn verify_audit_log(bytes: &[u8]) -> Result<usize, u64> {
    if bytes.is_empty() {
        return Ok(0);
    }
    let body = bytes.strip_suffix(b"\n").ok_or(1 + bytes.iter().filter(|b| **b == b'\n').count() as u64)?;
    let mut records = Vec::new();
    for (i, line) in body.split(|b| *b == b'\n').enumerate() {
        match AuditRecord::from_line(line) {
            Ok(r) => records.push(r),
            Err(_) => return Err(i as u64 + 1),
        }
    }
    verify_audit_chain(&records).map(|_| records.len())
}

/// A filtered sub-sequence is valid when seqs ascend and each record's hash
/// matches its content.
pub fn verify_subsequence(records: &[AuditRecord]) -> bool {
    records.windows(2).all(|w| w[0].seq < w[1].seq) && records.iter().all(AuditRecord::is_self_consistent)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WatermarkError {
    #[error("cube carries no watermark")]
    MissingWatermark,
}

type HmacSha256 = Hmac<Sha256>;

pub fn hmac_sha256(key: &[u8], parts: &[&[u8]]) -> Digest {
    let mut mac = <HmacSha256 as KeyInit>::new_from_slice(key).expect("hmac accepts any key length");
    for p in parts {
        mac.update(p);
    }
    mac.finalize().into_bytes().into()
}

/// Constant-time HMAC check.
pub fn hmac_sha256_verify(key: &[u8], parts: &[&[u8]], tag: &[u8]) -> bool {
    let mut mac = <HmacSha256 as KeyInit>::new_from_slice(key).expect("hmac accepts any key length");
    for p in parts {
        mac.update(p);
    }
    mac.verify_slice(tag).is_ok()
}

/// `HMAC-SHA-256(key, fingerprint || id bytes)`.
pub fn watermark_tag(cube: &MemCube, key: &[u8]) -> Digest {
    hmac_sha256(key, &[&cube.fingerprint, &cube.id.to_be_bytes()])
}

pub fn watermark_apply(cube: &MemCube, key: &[u8]) -> MemCube {
    let mut c = cube.clone();
    c.governance.watermark = Some(watermark_tag(cube, key));
    c
}

pub fn watermark_verify(cube: &MemCube, key: &[u8]) -> Result<bool, WatermarkError> {
    let tag = cube.governance.watermark.ok_or(WatermarkError::MissingWatermark)?;
    Ok(hmac_sha256_verify(key, &[&cube.fingerprint, &cube.id.to_be_bytes()], &tag))
}
