//! Per-cube lifecycle state machine with append-only version history.
//!
//! Legal transitions:
//!
//! | from              | event    | to                |
//! |-------------------|----------|-------------------|
//! | Generated         | Activate | Active            |
//! | Active            | Archive  | Archived          |
//! | Archived          | Activate | Active            |
//! | Active, Archived  | Freeze   | Frozen{prior}     |
//! | Frozen{prior}     | Unfreeze | prior             |
//! | Active, Archived  | Expire   | Expired           |
//! | Active, Archived  | Merge    | Merged{into}      |
//! | Active            | Commit   | Active (+1 ver)   |
//! | Active            | Rollback | Active (+1 ver)   |
//!
//! Everything else is `IllegalTransition`. Expired and Merged are terminal.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::canon::{b64_32, Digest};
use crate::ids::{secs_to_ms, CubeId, Timestamp};
use crate::memcube::{
    check_content, compute_fingerprint, BehavioralIndicators, CubeError, DescriptiveMeta,
    GovernanceAttrs, MemCube, Payload,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ThawState {
    Active,
    Archived,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LifecycleState {
    Generated,
    Active,
    Archived,
    Frozen { prior: ThawState },
    Expired,
    Merged { into: CubeId },
}

impl LifecycleState {
    pub fn is_terminal(self) -> bool {
        matches!(self, LifecycleState::Expired | LifecycleState::Merged { .. })
    }

    pub fn is_frozen(self) -> bool {
        matches!(self, LifecycleState::Frozen { .. })
    }

    fn thaw(self) -> Option<ThawState> {
        match self {
            LifecycleState::Active => Some(ThawState::Active),
            LifecycleState::Archived => Some(ThawState::Archived),
            _ => None,
        }
    }
}

impl From<ThawState> for LifecycleState {
    fn from(t: ThawState) -> Self {
        match t {
            ThawState::Active => LifecycleState::Active,
            ThawState::Archived => LifecycleState::Archived,
        }
    }
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LifecycleState::Generated => f.write_str("Generated"),
            LifecycleState::Active => f.write_str("Active"),
            LifecycleState::Archived => f.write_str("Archived"),
            LifecycleState::Frozen { prior } => write!(f, "Frozen({prior:?})"),
            LifecycleState::Expired => f.write_str("Expired"),
            LifecycleState::Merged { into } => write!(f, "Merged({into})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LifecycleEvent {
    Activate,
    Archive,
    Freeze,
    Unfreeze,
    Expire,
    Merge { into: CubeId },
    Commit { payload: Payload },
    Rollback { to_version: u64 },
}

impl LifecycleEvent {
    pub fn name(&self) -> &'static str {
        match self {
            LifecycleEvent::Activate => "Activate",
            LifecycleEvent::Archive => "Archive",
            LifecycleEvent::Freeze => "Freeze",
            LifecycleEvent::Unfreeze => "Unfreeze",
            LifecycleEvent::Expire => "Expire",
            LifecycleEvent::Merge { .. } => "Merge",
            LifecycleEvent::Commit { .. } => "Commit",
            LifecycleEvent::Rollback { .. } => "Rollback",
        }
    }
}

/// How the first version of a record came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Genesis {
    Created,
    Transformed { from: CubeId, version: u64 },
    Imported,
}

/// Why a version was written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VersionCause {
    Genesis(Genesis),
    Commit,
    Rollback { to_version: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VersionEntry {
    pub version: u64,
    #[serde(with = "b64_32")]
    pub fingerprint: Digest,
    pub descriptive: DescriptiveMeta,
    pub payload: Payload,
    pub committed_at: Timestamp,
    pub cause: VersionCause,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifecycleRecord {
    pub cube_id: CubeId,
    pub state: LifecycleState,
    pub versions: Vec<VersionEntry>,
    pub head_version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LifecycleError {
    #[error("illegal transition: {event} in state {state}")]
    IllegalTransition { state: LifecycleState, event: &'static str },
    #[error("unknown version {0}")]
    UnknownVersion(u64),
    #[error("a cube cannot merge into itself")]
    MergeIntoSelf,
    #[error(transparent)]
    Cube(#[from] CubeError),
}

/// Emitted for every successful transition so governance can log intent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionIntent {
    pub cube_id: CubeId,
    pub from: LifecycleState,
    pub to: LifecycleState,
    pub event: &'static str,
    pub head_version: u64,
    pub at: Timestamp,
}

pub trait LifecycleHook {
    fn on_transition(&mut self, intent: TransitionIntent);
}

impl LifecycleHook for () {
    fn on_transition(&mut self, _: TransitionIntent) {}
}

impl LifecycleHook for Vec<TransitionIntent> {
    fn on_transition(&mut self, intent: TransitionIntent) {
        self.push(intent);
    }
}

/// Pure transition table for the non-versioning events.
pub fn next_state(state: LifecycleState, event: &LifecycleEvent) -> Option<LifecycleState> {
    use LifecycleEvent as E;
    use LifecycleState as S;
    match (state, event) {
        (S::Generated, E::Activate) | (S::Archived, E::Activate) => Some(S::Active),
        (S::Active, E::Archive) => Some(S::Archived),
        (s, E::Freeze) => s.thaw().map(|prior| S::Frozen { prior }),
        (S::Frozen { prior }, E::Unfreeze) => Some(prior.into()),
        (s, E::Expire) => s.thaw().map(|_| S::Expired),
        (s, E::Merge { into }) => s.thaw().map(|_| S::Merged { into: *into }),
        (S::Active, E::Commit { .. }) | (S::Active, E::Rollback { .. }) => Some(S::Active),
        _ => None,
    }
}

impl LifecycleRecord {
    /// Starts a history at the cube's current version in state Generated.
    pub fn genesis(cube: &MemCube, genesis: Genesis, now: Timestamp) -> Self {
        LifecycleRecord {
            cube_id: cube.id,
            state: LifecycleState::Generated,
            versions: alloc::vec![VersionEntry {
                version: cube.version,
                fingerprint: cube.fingerprint,
                descriptive: cube.descriptive.clone(),
                payload: cube.payload.clone(),
                committed_at: now,
                cause: VersionCause::Genesis(genesis),
            }],
            head_version: cube.version,
        }
    }

    pub fn head(&self) -> &VersionEntry {
        self.versions.last().expect("a record always holds its genesis version")
    }

    /// First version held locally (1 unless the cube was imported).
    pub fn base_version(&self) -> u64 {
        self.versions[0].version
    }

    pub fn version(&self, v: u64) -> Option<&VersionEntry> {
        let base = self.base_version();
        if v < base {
            return None;
        }
        self.versions.get((v - base) as usize)
    }

    pub fn genesis_cause(&self) -> Genesis {
        match self.versions[0].cause {
            VersionCause::Genesis(g) => g,
            _ => Genesis::Created,
        }
    }

    /// Materializes the cube at `version` (head when `None`).
    pub fn cube_at(
        &self,
        version: Option<u64>,
        governance: &GovernanceAttrs,
        behavioral: &BehavioralIndicators,
    ) -> Option<MemCube> {
        let entry = match version {
            None => self.head(),
            Some(v) => self.version(v)?,
        };
        Some(MemCube {
            id: self.cube_id,
            descriptive: entry.descriptive.clone(),
            governance: governance.clone(),
            behavioral: behavioral.clone(),
            payload: entry.payload.clone(),
            version: entry.version,
            fingerprint: entry.fingerprint,
        })
    }

    fn illegal(&self, event: &LifecycleEvent) -> LifecycleError {
        LifecycleError::IllegalTransition { state: self.state, event: event.name() }
    }

    /// Applies `event`. Commit and Rollback append a version.
    pub fn transition(
        &self,
        event: &LifecycleEvent,
        now: Timestamp,
        hook: &mut dyn LifecycleHook,
    ) -> Result<LifecycleRecord, LifecycleError> {
        if let LifecycleEvent::Merge { into } = event {
            if *into == self.cube_id {
                return Err(LifecycleError::MergeIntoSelf);
            }
        }
        let to = next_state(self.state, event).ok_or_else(|| self.illegal(event))?;
        let next = match event {
            LifecycleEvent::Commit { payload } => {
                let descriptive = self.head().descriptive.clone();
                self.append(descriptive, payload.clone(), now, VersionCause::Commit)?
            }
            LifecycleEvent::Rollback { to_version } => {
                let target = self
                    .version(*to_version)
                    .ok_or(LifecycleError::UnknownVersion(*to_version))?;
                let cause = VersionCause::Rollback { to_version: *to_version };
                self.append(self.head().descriptive.clone(), target.payload.clone(), now, cause)?
            }
            _ => {
                let mut r = self.clone();
                r.state = to;
                r
            }
        };
        hook.on_transition(TransitionIntent {
            cube_id: self.cube_id,
            from: self.state,
            to: next.state,
            event: event.name(),
            head_version: next.head_version,
            at: now,
        });
        Ok(next)
    }

    fn append(
        &self,
        descriptive: DescriptiveMeta,
        payload: Payload,
        now: Timestamp,
        cause: VersionCause,
    ) -> Result<LifecycleRecord, LifecycleError> {
        check_content(&descriptive, &payload)?;
        let mut descriptive = descriptive;
        descriptive.updated_at = now.max(descriptive.created_at);
        let version = self.head_version + 1;
        let fingerprint = compute_fingerprint(self.cube_id, version, &descriptive, &payload);
        let mut r = self.clone();
        r.versions.push(VersionEntry {
            version,
            fingerprint,
            descriptive,
            payload,
            committed_at: now,
            cause,
        });
        r.head_version = version;
        Ok(r)
    }

    /// New version with `new_payload`; only legal while Active.
    pub fn commit_version(
        &self,
        new_payload: Payload,
        now: Timestamp,
        hook: &mut dyn LifecycleHook,
    ) -> Result<LifecycleRecord, LifecycleError> {
        self.transition(&LifecycleEvent::Commit { payload: new_payload }, now, hook)
    }

    /// Commit that may also change descriptive metadata (labels, type).
    pub fn commit_content(
        &self,
        descriptive: DescriptiveMeta,
        payload: Payload,
        now: Timestamp,
        hook: &mut dyn LifecycleHook,
    ) -> Result<LifecycleRecord, LifecycleError> {
        let event = LifecycleEvent::Commit { payload: payload.clone() };
        if self.state != LifecycleState::Active {
            return Err(self.illegal(&event));
        }
        let next = self.append(descriptive, payload, now, VersionCause::Commit)?;
        hook.on_transition(TransitionIntent {
            cube_id: self.cube_id,
            from: self.state,
            to: next.state,
            event: "Commit",
            head_version: next.head_version,
            at: now,
        });
        Ok(next)
    }

    /// Re-commits the payload of `to_version` as a new head.
    pub fn rollback(
        &self,
        to_version: u64,
        now: Timestamp,
        hook: &mut dyn LifecycleHook,
    ) -> Result<LifecycleRecord, LifecycleError> {
        // Unknown versions are reported before state legality.
        if self.version(to_version).is_none() {
            return Err(LifecycleError::UnknownVersion(to_version));
        }
        self.transition(&LifecycleEvent::Rollback { to_version }, now, hook)
    }

    /// Timestamp of the latest content change (commit or rollback).
    pub fn last_edit_at(&self) -> Option<Timestamp> {
        self.versions
            .iter()
            .rev()
            .find(|v| matches!(v.cause, VersionCause::Commit | VersionCause::Rollback { .. }))
            .map(|v| v.committed_at)
    }

    /// Checks append-only density: versions are `base..=head` without gaps
    /// and each fingerprint matches its content.
    pub fn check_history(&self) -> Result<(), String> {
        let base = self.base_version();
        if base == 0 {
            return Err("version 0 present".into());
        }
        for (i, v) in self.versions.iter().enumerate() {
            if v.version != base + i as u64 {
                return Err(format!("gap at index {i}: version {}", v.version));
            }
            let fp = compute_fingerprint(
                self.cube_id,
                v.version,
                &v.descriptive,
                &v.payload,
            );
            if fp != v.fingerprint {
                return Err(format!("fingerprint mismatch at version {}", v.version));
            }
        }
        if self.head().version != self.head_version {
            return Err(format!("head_version {} != last {}", self.head_version, self.head().version));
        }
        Ok(())
    }
}

/// Expiry predicate for a single cube; ignores lifecycle state.
pub fn expiry_due(cube: &MemCube, now: Timestamp) -> bool {
    let age = now.saturating_sub(cube.descriptive.created_at);
    let g = &cube.governance;
    let ttl_due = g.ttl_s.is_some_and(|ttl| age > secs_to_ms(ttl));
    let decay_due = g.decay.is_some_and(|d| {
        let window = secs_to_ms(d.window_s);
        age > window && cube.behavioral.accesses_within(now, window) < d.min_accesses
    });
    ttl_due || decay_due
}

/// Expires every Active or Archived cube whose ttl or decay rule is due.
/// Frozen and terminal cubes are left alone. Returns the expired ids.
pub fn expire_sweep(
    records: &mut BTreeMap<CubeId, LifecycleRecord>,
    cubes: &[MemCube],
    now: Timestamp,
    hook: &mut dyn LifecycleHook,
) -> BTreeSet<CubeId> {
    let mut expired = BTreeSet::new();
    for cube in cubes {
        let Some(record) = records.get(&cube.id) else { continue };
        if !matches!(record.state, LifecycleState::Active | LifecycleState::Archived) {
            continue;
        }
        if !expiry_due(cube, now) {
            continue;
        }
        if let Ok(next) = record.transition(&LifecycleEvent::Expire, now, hook) {
            records.insert(cube.id, next);
            expired.insert(cube.id);
        }
    }
    expired
}
