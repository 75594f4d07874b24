//! Seeded generators for cubes, payloads and metadata.

use std::collections::{BTreeSet, VecDeque};

use memos_core::memcube::{
    compute_fingerprint, AccessEvent, AccessKind, AclEntry, AclSubject, Action, BehavioralIndicators, Decay,
    DescriptiveMeta, GovernanceAttrs, MemCube, Origin, Payload, SemanticType, Sensitivity,
};
use memos_core::{CubeId, PrincipalId, Timestamp};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const WORDS: &[&str] = &[
    "tax", "deadline", "april", "metric", "units", "prefer", "coffee", "meeting", "project", "alpha", "beta",
    "report", "quarterly", "budget", "travel", "paris", "python", "rust", "memory", "cache", "model", "adapter",
    "user", "task", "policy", "invoice", "health", "doctor", "schedule", "green", "blue", "weekly", "notes",
    "review", "kernel", "vault", "agent", "plan", "draft", "summary",
];

/// Includes grammar keywords so request fuzzing has to quote.
pub const LABELS: &[&str] = &[
    "pref", "tax", "work", "home", "travel", "health", "finance", "code", "ops", "misc", "team:a", "k", "as", "then",
];

pub const PRINCIPALS: &[&str] = &["alice", "bob", "carol", "dave", "svc:indexer", "team-x"];

pub const DAY_MS: u64 = 86_400_000;

pub fn principal(r: &mut TestRng) -> PrincipalId {
    PrincipalId::new(*PRINCIPALS.choose(r).unwrap()).unwrap()
}

pub fn words(r: &mut TestRng, lo: usize, hi: usize) -> String {
    let n = r.gen_range(lo..=hi);
    (0..n).map(|_| *WORDS.choose(r).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Text exercising escapes, unicode and control characters.
pub fn wild_text(r: &mut TestRng, max: usize) -> String {
    const POOL: &[char] = &[
        'a', 'b', 'z', 'Q', '0', '9', ' ', ' ', '"', '\\', '\n', '\t', '\u{0}', '\u{1f}', 'é', 'ß', '日', '本',
        '\u{1F600}', '/', '<', '&', '=', '@', ',', '\'', '{', '}',
    ];
    let n = r.gen_range(1..=max);
    (0..n).map(|_| *POOL.choose(r).unwrap()).collect()
}

pub fn labels(r: &mut TestRng, max: usize) -> BTreeSet<String> {
    let n = r.gen_range(0..=max);
    (0..n).map(|_| LABELS.choose(r).unwrap().to_string()).collect()
}

pub fn bytes(r: &mut TestRng, max: usize) -> Vec<u8> {
    let n = r.gen_range(0..=max);
    (0..n).map(|_| r.gen()).collect()
}

pub fn adapter_name(r: &mut TestRng) -> String {
    const CH: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789_-";
    let n = r.gen_range(1..=24);
    (0..n).map(|_| *CH.choose(r).unwrap() as char).collect()
}

pub fn payload(r: &mut TestRng) -> Payload {
    match r.gen_range(0..3) {
        0 => Payload::Plaintext {
            text: if r.gen_bool(0.3) { wild_text(r, 40) } else { words(r, 1, 12) },
            format_tag: ["text", "markdown", "json"].choose(r).unwrap().to_string(),
        },
        1 => Payload::Activation {
            template_text: words(r, 1, 10),
            kv_descriptor: bytes(r, 48),
            token_estimate: r.gen_range(0..10_000),
        },
        _ => Payload::Parametric {
            adapter_name: adapter_name(r),
            adapter_descriptor: bytes(r, 64),
            domain_tags: labels(r, 3).into_iter().collect(),
        },
    }
}

pub fn semantic_type(r: &mut TestRng) -> SemanticType {
    *SemanticType::ALL.choose(r).unwrap()
}

pub fn descriptive(r: &mut TestRng, now: Timestamp) -> DescriptiveMeta {
    let created_at = r.gen_range(0..=now);
    DescriptiveMeta {
        created_at,
        updated_at: r.gen_range(created_at..=now),
        origin: *[Origin::UserInput, Origin::InferenceOutput, Origin::ExternalDoc, Origin::Transformation, Origin::Import]
            .choose(r)
            .unwrap(),
        origin_detail: if r.gen_bool(0.5) { String::new() } else { wild_text(r, 12) },
        semantic_type: semantic_type(r),
        labels: labels(r, 4),
    }
}

pub fn actions(r: &mut TestRng) -> BTreeSet<Action> {
    Action::ALL.iter().copied().filter(|_| r.gen_bool(0.4)).collect()
}

pub fn acl(r: &mut TestRng) -> Vec<AclEntry> {
    (0..r.gen_range(0..4))
        .map(|_| {
            let subject = if r.gen_bool(0.3) { AclSubject::Anyone } else { AclSubject::Principal(principal(r)) };
            AclEntry { subject, actions: actions(r) }
        })
        .collect()
}

pub fn sensitivity(r: &mut TestRng) -> Sensitivity {
    *[Sensitivity::Public, Sensitivity::Internal, Sensitivity::Confidential, Sensitivity::Restricted]
        .choose(r)
        .unwrap()
}

pub fn governance(r: &mut TestRng) -> GovernanceAttrs {
    GovernanceAttrs {
        owner: principal(r),
        acl: acl(r),
        ttl_s: r.gen_bool(0.3).then(|| r.gen_range(1..100_000)),
        decay: r.gen_bool(0.3).then(|| Decay { window_s: r.gen_range(1..100_000), min_accesses: r.gen_range(0..6) }),
        priority: r.gen_range(0..=9),
        sensitivity: sensitivity(r),
        watermark: r.gen_bool(0.2).then(|| r.gen()),
    }
}

pub fn access_kind(r: &mut TestRng) -> AccessKind {
    *[AccessKind::Read, AccessKind::Inject, AccessKind::Search].choose(r).unwrap()
}

/// Access log with timestamps spread over `[now - span, now]`, ascending.
pub fn behavioral(r: &mut TestRng, now: Timestamp, max_log: usize, span: u64) -> BehavioralIndicators {
    let n = r.gen_range(0..=max_log);
    let mut times: Vec<u64> = (0..n).map(|_| now.saturating_sub(r.gen_range(0..=span))).collect();
    times.sort_unstable();
    let access_log: VecDeque<AccessEvent> =
        times.iter().map(|&at| AccessEvent { at, kind: access_kind(r) }).collect();
    BehavioralIndicators {
        access_count_total: n as u64 + r.gen_range(0..30),
        last_access: times.last().copied(),
        access_log,
        relevance_ema: match r.gen_range(0..4) {
            0 => 0.0,
            1 => 1.0,
            _ => r.gen::<f64>(),
        },
    }
}

/// Any structurally valid cube (random version, consistent fingerprint).
pub fn cube(r: &mut TestRng) -> MemCube {
    let now = r.gen_range(1..4_000_000_000_000u64);
    let id = CubeId(r.gen::<u128>() | 1);
    let descriptive = descriptive(r, now);
    let payload = payload(r);
    let version = r.gen_range(1..=12);
    MemCube {
        id,
        fingerprint: compute_fingerprint(id, version, &descriptive, &payload),
        governance: governance(r),
        behavioral: behavioral(r, now, 20, 10 * DAY_MS),
        descriptive,
        payload,
        version,
    }
}

pub fn plain_cube(r: &mut TestRng, id: CubeId, now: Timestamp) -> MemCube {
    let mut d = DescriptiveMeta::new(semantic_type(r));
    d.labels = labels(r, 3);
    let mut g = GovernanceAttrs::owned_by(principal(r));
    g.priority = r.gen_range(0..=9);
    memos_core::create_cube(id, Payload::plaintext(words(r, 1, 10)), d, g, now).unwrap()
}
