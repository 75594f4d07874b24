//! Seeded workload harness.
//!
//! A spec expands into a fixed event list (same seed, same bytes). Events run
//! against a kernel with a manual clock that advances a fixed step per
//! event, so single-threaded runs are fully reproducible. The report carries
//! the counters and the verdict of every invariant check.

use std::collections::BTreeMap;

use memos_core::canon;
use memos_core::governance::verify_subsequence;
use memos_core::{AclEntry, AclSubject, Action, CubeId, PrincipalId, SemanticType, Sensitivity};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kernel::{
    ClockMode, GovernanceSpec, Kernel, KernelConfig, KernelError, NewCube, RecallQuery, Session, UpdatePatch,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Create,
    Get,
    Recall,
    Update,
    Freeze,
    Rollback,
    Archive,
    Transform,
    Expire,
}

impl OpKind {
    pub const ALL: [OpKind; 9] = [
        OpKind::Create,
        OpKind::Get,
        OpKind::Recall,
        OpKind::Update,
        OpKind::Freeze,
        OpKind::Rollback,
        OpKind::Archive,
        OpKind::Transform,
        OpKind::Expire,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub seed: u64,
    pub num_cubes: usize,
    pub num_principals: usize,
    pub num_requests: usize,
    /// Share of each op kind; must sum to 1.
    pub mix: BTreeMap<OpKind, f64>,
    /// Logical milliseconds per event.
    pub step_ms: u64,
    /// 1 runs in order on the caller's thread.
    pub threads: usize,
    /// Restrict targets to the first N cubes.
    pub hot_cubes: Option<usize>,
    pub cache_capacity: usize,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        let mix = [
            (OpKind::Create, 0.05),
            (OpKind::Get, 0.25),
            (OpKind::Recall, 0.30),
            (OpKind::Update, 0.15),
            (OpKind::Freeze, 0.05),
            (OpKind::Rollback, 0.05),
            (OpKind::Archive, 0.03),
            (OpKind::Transform, 0.10),
            (OpKind::Expire, 0.02),
        ]
        .into();
        WorkloadSpec {
            seed: 0,
            num_cubes: 50,
            num_principals: 4,
            num_requests: 500,
            mix,
            step_ms: 60_000,
            threads: 1,
            hot_cubes: None,
            cache_capacity: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkloadError {
    #[error("mix ratios sum to {0}, expected 1")]
    BadMix(String),
    #[error("mix ratio for {0:?} is negative")]
    NegativeRatio(OpKind),
    #[error("spec needs at least one principal and one thread")]
    Empty,
}

/// One generated request. Cube targets index the seeded population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Event {
    Create { principal: usize, text: String, labels: Vec<String>, shared: bool, sensitivity: Sensitivity },
    Get { principal: usize, cube: usize },
    Recall { principal: usize, text: String, labels: Vec<String> },
    Update { principal: usize, cube: usize, text: String },
    Freeze { principal: usize, cube: usize, unfreeze: bool },
    Rollback { principal: usize, cube: usize, to: u64 },
    Archive { principal: usize, cube: usize },
    Transform { principal: usize, cube: usize },
    Expire,
}

impl Event {
    fn target(&self) -> Option<usize> {
        match self {
            Event::Get { cube, .. }
            | Event::Update { cube, .. }
            | Event::Freeze { cube, .. }
            | Event::Rollback { cube, .. }
            | Event::Archive { cube, .. }
            | Event::Transform { cube, .. } => Some(*cube),
            _ => None,
        }
    }
}

const WORDS: &[&str] = &[
    "metric", "units", "tax", "deadline", "invoice", "travel", "budget", "recipe", "python", "rust", "meeting",
    "project", "report", "weather", "music", "garden", "health", "sleep", "coffee", "train", "flight", "hotel",
    "contract", "review", "design", "schema", "backup", "server", "family", "birthday",
];
const LABELS: &[&str] = &["pref", "work", "home", "finance", "tech", "travel", "misc"];

fn text(r: &mut ChaCha8Rng) -> String {
    let n = r.gen_range(2..=6);
    (0..n).map(|_| *WORDS.choose(r).expect("non-empty")).collect::<Vec<_>>().join(" ")
}

fn labels(r: &mut ChaCha8Rng) -> Vec<String> {
    let n = r.gen_range(0..=2);
    let mut ls: Vec<String> = (0..n).map(|_| LABELS.choose(r).expect("non-empty").to_string()).collect();
    ls.sort();
    ls.dedup();
    ls
}

fn create_event(r: &mut ChaCha8Rng, principals: usize) -> Event {
    let sensitivity = match r.gen_range(0..10) {
        0..=3 => Sensitivity::Public,
        4..=7 => Sensitivity::Internal,
        8 => Sensitivity::Confidential,
        _ => Sensitivity::Restricted,
    };
    Event::Create { principal: r.gen_range(0..principals), text: text(r), labels: labels(r), shared: r.gen_bool(0.6), sensitivity }
}

pub fn principal_name(i: usize) -> String {
    format!("p{i}")
}

pub const ADMIN: &str = "admin";

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.num_principals == 0 || self.threads == 0 {
            return Err(WorkloadError::Empty);
        }
        if let Some((k, _)) = self.mix.iter().find(|(_, v)| **v < 0.0) {
            return Err(WorkloadError::NegativeRatio(*k));
        }
        let sum: f64 = self.mix.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(WorkloadError::BadMix(format!("{sum}")));
        }
        Ok(())
    }

    /// Kernel settings matching this spec: manual clock, traced cache.
    pub fn kernel_config(&self) -> KernelConfig {
        KernelConfig {
            seed: self.seed,
            cache_capacity: self.cache_capacity.max(1),
            clock: ClockMode::Manual { start: 1_000_000 },
            trace_cache: true,
            ..KernelConfig::default()
        }
    }

    /// The seeded population followed by the request events.
    pub fn events(&self) -> Result<(Vec<Event>, Vec<Event>), WorkloadError> {
        self.validate()?;
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        let population: Vec<Event> = (0..self.num_cubes).map(|_| create_event(&mut r, self.num_principals)).collect();
        let kinds: Vec<(OpKind, f64)> = self.mix.iter().map(|(k, v)| (*k, *v)).collect();
        let pool = self.hot_cubes.unwrap_or(self.num_cubes).min(self.num_cubes);
        let mut events = Vec::with_capacity(self.num_requests);
        for _ in 0..self.num_requests {
            let x: f64 = r.gen();
            let mut acc = 0.0;
            let mut kind = kinds.last().map_or(OpKind::Get, |k| k.0);
            for (k, v) in &kinds {
                acc += v;
                if x < acc {
                    kind = *k;
                    break;
                }
            }
            let principal = r.gen_range(0..self.num_principals);
            let needs_cube = !matches!(kind, OpKind::Create | OpKind::Recall | OpKind::Expire);
            if needs_cube && pool == 0 {
                events.push(create_event(&mut r, self.num_principals));
                continue;
            }
            let cube = if needs_cube { r.gen_range(0..pool) } else { 0 };
            events.push(match kind {
                OpKind::Create => create_event(&mut r, self.num_principals),
                OpKind::Get => Event::Get { principal, cube },
                OpKind::Recall => {
                    // hot workloads re-query the text of a hot cube
                    let t = match (self.hot_cubes, pool) {
                        (Some(_), 1..) => match &population[r.gen_range(0..pool)] {
                            Event::Create { text, .. } => text.clone(),
                            _ => unreachable!("population holds creates"),
                        },
                        _ => text(&mut r),
                    };
                    Event::Recall { principal, text: t, labels: labels(&mut r) }
                }
                OpKind::Update => Event::Update { principal, cube, text: text(&mut r) },
                OpKind::Freeze => Event::Freeze { principal, cube, unfreeze: r.gen_bool(0.5) },
                OpKind::Rollback => Event::Rollback { principal, cube, to: r.gen_range(1..=3) },
                OpKind::Archive => Event::Archive { principal, cube },
                OpKind::Transform => Event::Transform { principal, cube },
                OpKind::Expire => Event::Expire,
            });
        }
        Ok((population, events))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invariants {
    pub audit_verifies: bool,
    pub histories_dense: bool,
    pub index_consistent: bool,
    /// Every request left at least one audit record.
    pub complete_mediation: bool,
    /// Checked only in single-threaded runs.
    pub no_denied_effect: Option<bool>,
    /// Each session's records form a valid sub-sequence of the log.
    pub session_views_verify: bool,
}

impl Invariants {
    pub fn all_hold(&self) -> bool {
        self.audit_verifies
            && self.histories_dense
            && self.index_consistent
            && self.complete_mediation
            && self.no_denied_effect != Some(false)
            && self.session_views_verify
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadReport {
    pub events: u64,
    pub succeeded: u64,
    pub errors: BTreeMap<String, u64>,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub hit_rate: f64,
    pub transforms: BTreeMap<String, u64>,
    pub audit_len: u64,
    pub expired: u64,
    /// Hex SHA-256 of the final state snapshot.
    pub state_digest: String,
    pub invariants: Invariants,
}

struct Outcome {
    ok: bool,
    code: Option<&'static str>,
    audited: bool,
    denied_effect: bool,
}

fn exec(k: &Kernel, ids: &[CubeId], principals: &[PrincipalId], ev: &Event, check_denied: bool) -> Outcome {
    let who = |i: &usize| principals[*i % principals.len()].clone();
    let s = match ev {
        Event::Create { principal, .. }
        | Event::Get { principal, .. }
        | Event::Recall { principal, .. }
        | Event::Update { principal, .. }
        | Event::Freeze { principal, .. }
        | Event::Rollback { principal, .. }
        | Event::Archive { principal, .. }
        | Event::Transform { principal, .. } => Session::new(who(principal)),
        Event::Expire => Session::named(ADMIN).expect("valid"),
    };
    let target = ev.target().map(|i| ids[i]);
    let before = match (check_denied, target) {
        (true, Some(id)) => k.backend().load(id).ok().flatten(),
        _ => None,
    };
    let result: Result<(), KernelError> = match ev {
        Event::Create { text, labels, shared, sensitivity, .. } => {
            k.create(&s, &create_spec(text, labels, *shared, *sensitivity)).map(drop)
        }
        Event::Get { .. } => k.get(&s, target.expect("target"), None).map(drop),
        Event::Recall { text, labels, .. } => {
            let q = RecallQuery { text: text.clone(), labels: labels.iter().cloned().collect(), ..RecallQuery::default() };
            k.recall(&s, &q).map(drop)
        }
        Event::Update { text, .. } => {
            let p = UpdatePatch { text: Some(text.clone()), ..UpdatePatch::default() };
            k.update(&s, target.expect("target"), &p).map(drop)
        }
        Event::Freeze { unfreeze, .. } => k.freeze(&s, target.expect("target"), *unfreeze).map(drop),
        Event::Rollback { to, .. } => k.rollback(&s, target.expect("target"), *to).map(drop),
        Event::Archive { .. } => k.archive(&s, target.expect("target")).map(drop),
        Event::Transform { .. } => k.transform(&s, target.expect("target")).map(drop),
        Event::Expire => k.expire_sweep(&s).map(drop),
    };
    let denied = matches!(result, Err(KernelError::AccessDenied { .. }));
    let denied_effect = denied
        && check_denied
        && target.is_some_and(|id| k.backend().load(id).ok().flatten() != before);
    Outcome {
        ok: result.is_ok(),
        code: result.as_ref().err().map(KernelError::code),
        audited: !s.seqs().is_empty(),
        denied_effect,
    }
}

fn create_spec(text: &str, labels: &[String], shared: bool, sensitivity: Sensitivity) -> NewCube {
    let acl = if shared { vec![AclEntry::new(AclSubject::Anyone, [Action::Read, Action::Schedule])] } else { Vec::new() };
    NewCube::text(text)
        .labels(labels.iter().cloned())
        .typed(SemanticType::Other)
        .governed(GovernanceSpec { acl, sensitivity: Some(sensitivity), ..GovernanceSpec::default() })
}

/// Runs `spec` against `kernel`, which should start empty and use
/// [`WorkloadSpec::kernel_config`].
pub fn run_workload(spec: &WorkloadSpec, kernel: &Kernel) -> Result<WorkloadReport, WorkloadError> {
    let (population, events) = spec.events()?;
    let principals: Vec<PrincipalId> =
        (0..spec.num_principals).map(|i| PrincipalId::new(principal_name(i)).expect("valid")).collect();
    let mut ids = Vec::with_capacity(population.len());
    for ev in &population {
        let Event::Create { principal, text, labels, shared, sensitivity } = ev else { unreachable!() };
        let s = Session::new(principals[*principal].clone());
        kernel.advance(spec.step_ms);
        let w = kernel
            .create(&s, &create_spec(text, labels, *shared, *sensitivity))
            .expect("population cubes are well-formed");
        ids.push(w.id);
    }

    let single = spec.threads == 1;
    let outcomes: Vec<Outcome> = if single {
        events
            .iter()
            .map(|ev| {
                kernel.advance(spec.step_ms);
                exec(kernel, &ids, &principals, ev, true)
            })
            .collect()
    } else {
        let chunks: Vec<Vec<&Event>> = (0..spec.threads)
            .map(|t| events.iter().skip(t).step_by(spec.threads).collect())
            .collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|chunk| {
                    let (ids, principals) = (&ids, &principals);
                    scope.spawn(move || {
                        chunk
                            .iter()
                            .map(|ev| {
                                kernel.advance(spec.step_ms);
                                exec(kernel, ids, principals, ev, false)
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("workload thread panicked")).collect()
        })
    };

    let mut errors = BTreeMap::new();
    for o in &outcomes {
        if let Some(c) = o.code {
            *errors.entry(c.to_string()).or_insert(0) += 1;
        }
    }
    let stats = kernel.stats();
    let verdict = kernel.verify_audit();
    let records = kernel.audit_records().unwrap_or_default();
    let session_views_verify = principals.iter().all(|p| {
        let mine: Vec<_> = records.iter().filter(|r| &r.principal == p).cloned().collect();
        verify_subsequence(&mine)
    });
    let touches = stats.cache_hits + stats.cache_misses;
    let snapshot = kernel.state_snapshot().unwrap_or_default();
    let invariants = Invariants {
        audit_verifies: verdict.ok,
        histories_dense: kernel.histories_dense().map(|r| r.is_ok()).unwrap_or(false),
        index_consistent: kernel.index_consistent().unwrap_or(false),
        complete_mediation: outcomes.iter().all(|o| o.audited),
        no_denied_effect: single.then(|| outcomes.iter().all(|o| !o.denied_effect)),
        session_views_verify,
    };
    Ok(WorkloadReport {
        events: outcomes.len() as u64,
        succeeded: outcomes.iter().filter(|o| o.ok).count() as u64,
        errors,
        cache_hits: stats.cache_hits,
        cache_misses: stats.cache_misses,
        hit_rate: if touches == 0 { 0.0 } else { stats.cache_hits as f64 / touches as f64 },
        transforms: stats.transforms,
        audit_len: verdict.records,
        expired: stats.expired,
        state_digest: canon::to_hex(&canon::sha256(&snapshot)),
        invariants,
    })
}
