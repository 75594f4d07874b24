//! Reference implementations written independently of the library code.

use std::collections::{BTreeSet, VecDeque};

use memos_core::lifecycle::{LifecycleRecord, LifecycleState, ThawState, VersionCause};
use memos_core::memcube::{AclSubject, Action, GovernanceAttrs, MemCube, MemoryClass, Sensitivity};
use memos_core::mip::{DigestScope, MipError};
use memos_core::{CubeId, PrincipalId, Timestamp};

// ---------------------------------------------------------------- lifecycle

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RefState {
    Gen,
    Act,
    Arc,
    Frz { was_active: bool },
    Exp,
    Mrg(u128),
}

#[derive(Clone, Debug)]
pub enum RefEvent {
    Activate,
    Archive,
    Freeze,
    Unfreeze,
    Expire,
    Merge(u128),
    Commit(String),
    Rollback(u64),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RefErr {
    Illegal,
    Unknown,
    SelfMerge,
    BadPayload,
}

/// The whole machine: state plus payload history (index = version - 1).
pub fn ref_step(me: u128, s: RefState, hist: &mut Vec<String>, e: &RefEvent) -> Result<RefState, RefErr> {
    use RefEvent as E;
    use RefState::*;
    if matches!(e, E::Merge(t) if *t == me) {
        return Err(RefErr::SelfMerge);
    }
    Ok(match (s, e) {
        (Gen | Arc, E::Activate) => Act,
        (Act, E::Archive) => Arc,
        (Act | Arc, E::Freeze) => Frz { was_active: s == Act },
        (Frz { was_active: true }, E::Unfreeze) => Act,
        (Frz { was_active: false }, E::Unfreeze) => Arc,
        (Act | Arc, E::Expire) => Exp,
        (Act | Arc, E::Merge(t)) => Mrg(*t),
        (Act, E::Commit(t)) if t.is_empty() => return Err(RefErr::BadPayload),
        (Act, E::Commit(t)) => {
            hist.push(t.clone());
            Act
        }
        (Act, E::Rollback(v)) => {
            let old = hist.get((*v as usize).wrapping_sub(1)).ok_or(RefErr::Unknown)?.clone();
            hist.push(old);
            Act
        }
        _ => return Err(RefErr::Illegal),
    })
}

pub fn to_ref_state(s: LifecycleState) -> RefState {
    match s {
        LifecycleState::Generated => RefState::Gen,
        LifecycleState::Active => RefState::Act,
        LifecycleState::Archived => RefState::Arc,
        LifecycleState::Frozen { prior } => RefState::Frz { was_active: prior == ThawState::Active },
        LifecycleState::Expired => RefState::Exp,
        LifecycleState::Merged { into } => RefState::Mrg(into.0),
    }
}

/// Brute-force expiry rule for one cube in a given state.
pub fn ref_expires(cube: &MemCube, state: LifecycleState, now: Timestamp) -> bool {
    if !matches!(state, LifecycleState::Active | LifecycleState::Archived) {
        return false;
    }
    let age = now.saturating_sub(cube.descriptive.created_at);
    let g = &cube.governance;
    if let Some(ttl) = g.ttl_s {
        if age > ttl * 1000 {
            return true;
        }
    }
    if let Some(d) = g.decay {
        let w = d.window_s * 1000;
        let recent = cube
            .behavioral
            .access_log
            .iter()
            .filter(|e| e.at <= now && now - e.at <= w)
            .count() as u64;
        if age > w && recent < d.min_accesses {
            return true;
        }
    }
    false
}

// ---------------------------------------------------------------- scheduler

/// Doubly-linked-list style LRU: front is least recently used.
pub struct LruRef {
    cap: usize,
    q: VecDeque<CubeId>,
}

impl LruRef {
    pub fn new(cap: usize) -> Self {
        LruRef { cap, q: VecDeque::new() }
    }

    pub fn touch(&mut self, id: CubeId) -> Option<CubeId> {
        if let Some(p) = self.q.iter().position(|x| *x == id) {
            self.q.remove(p);
            self.q.push_back(id);
            return None;
        }
        let victim = if self.q.len() == self.cap { self.q.pop_front() } else { None };
        self.q.push_back(id);
        victim
    }

    pub fn evict(&mut self) -> Option<CubeId> {
        self.q.pop_front()
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn most_recent_first(&self) -> Vec<CubeId> {
        self.q.iter().rev().copied().collect()
    }
}

pub fn ref_fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn ref_embed(text: &str) -> [f64; 64] {
    let mut v = [0.0f64; 64];
    let mut tok = String::new();
    for c in text.to_lowercase().chars().chain(std::iter::once(' ')) {
        if c.is_alphanumeric() {
            tok.push(c);
        } else if !tok.is_empty() {
            let h = ref_fnv(tok.as_bytes());
            v[(h % 64) as usize] += if h >> 63 == 0 { 1.0 } else { -1.0 };
            tok.clear();
        }
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    v
}

pub fn ref_cosine(a: &[f64; 64], b: &[f64; 64]) -> f64 {
    let mut dot = 0.0;
    for i in 0..64 {
        dot += a[i] * b[i];
    }
    dot.clamp(-1.0, 1.0) + 0.0
}

/// Exhaustive ranking over raw texts.
pub fn ref_rank(query: &str, cands: &[(CubeId, String)], k: usize, min_score: f64) -> Vec<(CubeId, f64)> {
    let q = ref_embed(query);
    if q.iter().all(|x| *x == 0.0) {
        return vec![];
    }
    let mut all: Vec<(CubeId, f64)> = cands
        .iter()
        .map(|(id, t)| (*id, ref_cosine(&q, &ref_embed(t))))
        .filter(|(_, s)| *s >= min_score)
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

pub fn ref_label_match(query: &BTreeSet<String>, all: bool, labels: &BTreeSet<String>) -> bool {
    if all {
        query.iter().all(|q| labels.contains(q))
    } else {
        query.iter().any(|q| labels.contains(q))
    }
}

/// Takes ranked ids while the running token total fits the budget.
pub fn ref_budget_prefix(ranked: &[CubeId], tokens: impl Fn(CubeId) -> u64, budget: u64) -> Vec<CubeId> {
    let mut used = 0;
    let mut out = vec![];
    if budget == 0 {
        return out;
    }
    for id in ranked {
        let t = tokens(*id);
        if used + t > budget {
            break;
        }
        used += t;
        out.push(*id);
    }
    out
}

// ---------------------------------------------------------- transformation

pub const PROMOTE_WINDOW_MS: u64 = 3_600_000;
pub const PROMOTE_MIN: u64 = 5;
pub const DISTILL_MIN: u64 = 20;
pub const DISTILL_EMA: f64 = 0.7;
pub const DISTILL_QUIET_MS: u64 = 604_800_000;
pub const STALE_MS: u64 = 2_592_000_000;

pub const ARROWS: [(MemoryClass, MemoryClass); 4] = [
    (MemoryClass::Plaintext, MemoryClass::Activation),
    (MemoryClass::Plaintext, MemoryClass::Parametric),
    (MemoryClass::Activation, MemoryClass::Parametric),
    (MemoryClass::Parametric, MemoryClass::Plaintext),
];

/// Default-threshold rule evaluator with distill > promote > externalize.
pub fn ref_transform(cube: &MemCube, record: &LifecycleRecord, now: Timestamp) -> Option<MemoryClass> {
    if record.state != LifecycleState::Active {
        return None;
    }
    let b = &cube.behavioral;
    let class = cube.payload.class();
    let edited_recently = record.versions.iter().any(|v| {
        matches!(v.cause, VersionCause::Commit | VersionCause::Rollback { .. })
            && now.saturating_sub(v.committed_at) <= DISTILL_QUIET_MS
    });
    if class != MemoryClass::Parametric
        && b.access_count_total >= DISTILL_MIN
        && b.relevance_ema >= DISTILL_EMA
        && !edited_recently
    {
        return Some(MemoryClass::Parametric);
    }
    let in_window = b.access_log.iter().filter(|e| e.at <= now && e.at + PROMOTE_WINDOW_MS >= now).count() as u64;
    if class == MemoryClass::Plaintext && in_window >= PROMOTE_MIN {
        return Some(MemoryClass::Activation);
    }
    let stale = match b.last_access {
        None => true,
        Some(t) => now.saturating_sub(t) > STALE_MS,
    };
    if class == MemoryClass::Parametric && stale {
        return Some(MemoryClass::Plaintext);
    }
    None
}

// --------------------------------------------------------------- governance

pub fn ref_allowed(p: &PrincipalId, g: &GovernanceAttrs, a: Action) -> bool {
    if g.owner == *p {
        return true;
    }
    g.acl.iter().any(|e| {
        e.actions.contains(&a)
            && match &e.subject {
                AclSubject::Principal(q) => q == p,
                AclSubject::Anyone => g.sensitivity != Sensitivity::Restricted,
            }
    })
}

// -------------------------------------------------------------- interchange

/// The error class a single-bit flip must produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    BadMagic,
    Malformed,
    VersionIncompatible,
    CountMismatch,
    ContentDigest,
    EntryDigest(usize),
    /// A length field of entry `i` was hit: the reader must stop at that entry.
    EntryFraming(usize),
    SignatureInvalid,
}

impl Expect {
    pub fn accepts(self, e: &MipError) -> bool {
        match (self, e) {
            (Expect::BadMagic, MipError::BadMagic) => true,
            (Expect::Malformed, MipError::Malformed(_)) => true,
            (Expect::VersionIncompatible, MipError::VersionIncompatible { .. }) => true,
            (Expect::CountMismatch, MipError::CountMismatch { .. }) => true,
            (Expect::ContentDigest, MipError::DigestMismatch(DigestScope::Content)) => true,
            (Expect::EntryDigest(i), MipError::DigestMismatch(DigestScope::Entry(j))) => i == *j,
            (Expect::EntryFraming(i), MipError::Truncated { entry }) => i == *entry,
            (Expect::EntryFraming(i), MipError::DigestMismatch(DigestScope::Entry(j))) => i == *j,
            (Expect::SignatureInvalid, MipError::SignatureInvalid) => true,
            _ => false,
        }
    }
}

/// Independent framing walk: byte ranges of the archive.
pub struct Regions {
    pub manifest: std::ops::Range<usize>,
    /// per entry: (header_len, header, payload_len, payload, digest)
    pub entries: Vec<[std::ops::Range<usize>; 5]>,
    pub signature: std::ops::Range<usize>,
}

pub fn regions(a: &[u8]) -> Regions {
    let be = |s: &[u8]| s.iter().fold(0u64, |acc, b| acc << 8 | *b as u64) as usize;
    let mlen = be(&a[4..8]);
    let mut p = 8 + mlen;
    let end = a.len() - 32;
    let mut entries = vec![];
    while p < end {
        let h = be(&a[p..p + 4]);
        let pl = be(&a[p + 4 + h..p + 12 + h]);
        let q = p + 12 + h;
        entries.push([p..p + 4, p + 4..p + 4 + h, p + 4 + h..q, q..q + pl, q + pl..q + pl + 32]);
        p = q + pl + 32;
    }
    Regions { manifest: 8..8 + mlen, entries, signature: end..a.len() }
}

fn is_plain_uint(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) && (s == "0" || !s.starts_with('0'))
}

/// Classifies a manifest whose bytes were altered, relative to the original.
pub fn classify_manifest(orig: &[u8], altered: &[u8]) -> Expect {
    use base64::Engine;
    use serde_json::Value;
    let malformed = Expect::Malformed;
    let Ok(v) = serde_json::from_slice::<Value>(altered) else { return malformed };
    if serde_json::to_vec(&v).unwrap() != altered {
        return malformed;
    }
    let o: Value = serde_json::from_slice(orig).unwrap();
    let Some(m) = v.as_object() else { return malformed };
    let keys: Vec<&str> = m.keys().map(|k| k.as_str()).collect();
    if keys != ["content_digest", "created_at", "cube_count", "mip_version", "producer"] {
        return malformed;
    }
    let version = m["mip_version"].as_str().and_then(|s| s.split_once('.'));
    let Some((major, minor)) = version else { return malformed };
    if !is_plain_uint(major) || !is_plain_uint(minor) || major.parse::<u32>().is_err() || minor.parse::<u32>().is_err() {
        return malformed;
    }
    let producer_ok = m["producer"].as_str().is_some_and(|p| {
        !p.is_empty() && p.len() <= 64 && p.bytes().all(|b| matches!(b, b'a'..=b'z' | b'0'..=b'9' | b':' | b'_' | b'-'))
    });
    if !producer_ok || m["created_at"].as_u64().is_none() || m["cube_count"].as_u64().is_none() {
        return malformed;
    }
    let digest = m["content_digest"].as_str().and_then(|s| base64::engine::general_purpose::STANDARD.decode(s).ok());
    if digest.as_ref().is_none_or(|d| d.len() != 32) {
        return malformed;
    }
    if major != "1" {
        return Expect::VersionIncompatible;
    }
    if m["content_digest"] != o["content_digest"] {
        return Expect::ContentDigest;
    }
    if m["cube_count"] != o["cube_count"] {
        return Expect::CountMismatch;
    }
    Expect::SignatureInvalid
}

/// Expected outcome of flipping `bit` (absolute bit index) of a signed archive.
pub fn classify_flip(orig: &[u8], bit: usize) -> Expect {
    let byte = bit / 8;
    let r = regions(orig);
    if byte < 4 {
        return Expect::BadMagic;
    }
    if byte < 8 {
        return Expect::Malformed;
    }
    if r.manifest.contains(&byte) {
        let mut m = orig[r.manifest.clone()].to_vec();
        m[byte - r.manifest.start] ^= 1 << (bit % 8);
        return classify_manifest(&orig[r.manifest.clone()], &m);
    }
    for (i, e) in r.entries.iter().enumerate() {
        if e[0].contains(&byte) || e[2].contains(&byte) {
            return Expect::EntryFraming(i);
        }
        if e[1].contains(&byte) {
            return Expect::ContentDigest;
        }
        if e[3].contains(&byte) || e[4].contains(&byte) {
            return Expect::EntryDigest(i);
        }
    }
    assert!(r.signature.contains(&byte));
    Expect::SignatureInvalid
}
