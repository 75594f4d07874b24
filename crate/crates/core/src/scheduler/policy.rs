//! Pluggable selection policies and the context-injection scheduler.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::cache::HotCache;
use super::embed::{embed, Embedding};
use super::rank::semantic_rank;
use crate::ids::{CubeId, PrincipalId, Timestamp};
use crate::memcube::{AccessKind, MemCube};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelMode {
    All,
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SchedulingPolicy {
    Lru { capacity: usize },
    SemanticTopK { k: usize, min_score: f64 },
    LabelMatch { required: BTreeSet<String>, mode: LabelMode },
    /// Intersects the non-semantic members, then ranks with the first
    /// semantic member.
    Composite(Vec<SchedulingPolicy>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("lru capacity must be at least 1")]
    ZeroCapacity,
    #[error("top-k requires k >= 1")]
    ZeroK,
    #[error("min_score must lie in [0,1]")]
    MinScoreRange,
}

impl SchedulingPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        match self {
            SchedulingPolicy::Lru { capacity: 0 } => Err(PolicyError::ZeroCapacity),
            SchedulingPolicy::SemanticTopK { k: 0, .. } => Err(PolicyError::ZeroK),
            SchedulingPolicy::SemanticTopK { min_score, .. } if !(0.0..=1.0).contains(min_score) => {
                Err(PolicyError::MinScoreRange)
            }
            SchedulingPolicy::Composite(ps) => ps.iter().try_for_each(|p| p.validate()),
            _ => Ok(()),
        }
    }

    fn is_semantic(&self) -> bool {
        matches!(self, SchedulingPolicy::SemanticTopK { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextScope {
    User,
    Task,
    Organization,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryContext {
    pub principal: PrincipalId,
    pub query_text: String,
    pub query_labels: BTreeSet<String>,
    pub scope: ContextScope,
    pub token_budget: u64,
}

impl QueryContext {
    pub fn new(principal: PrincipalId, query_text: impl Into<String>, token_budget: u64) -> Self {
        QueryContext {
            principal,
            query_text: query_text.into(),
            query_labels: BTreeSet::new(),
            scope: ContextScope::User,
            token_budget,
        }
    }
}

pub fn labels_match(query: &BTreeSet<String>, mode: LabelMode, labels: &BTreeSet<String>) -> bool {
    match mode {
        LabelMode::All => query.is_subset(labels),
        LabelMode::Any => !query.is_disjoint(labels),
    }
}

/// All: label superset of `query`. Any: non-empty intersection.
pub fn label_match(query: &BTreeSet<String>, mode: LabelMode, cubes: &[MemCube]) -> BTreeSet<CubeId> {
    cubes
        .iter()
        .filter(|c| labels_match(query, mode, &c.descriptive.labels))
        .map(|c| c.id)
        .collect()
}

/// Ordered `(candidate index, score)` pairs produced by `policy`.
pub fn rank_candidates(
    ctx: &QueryContext,
    candidates: &[MemCube],
    policy: &SchedulingPolicy,
    cache: &HotCache,
) -> Vec<(usize, f64)> {
    let all: Vec<usize> = (0..candidates.len()).collect();
    select(ctx, candidates, &all, policy, cache)
}

fn select(
    ctx: &QueryContext,
    cands: &[MemCube],
    pool: &[usize],
    policy: &SchedulingPolicy,
    cache: &HotCache,
) -> Vec<(usize, f64)> {
    match policy {
        SchedulingPolicy::Lru { capacity } => {
            let mut resident: Vec<(usize, (u64, u64))> = pool
                .iter()
                .filter_map(|&i| cache.entry(cands[i].id).map(|e| (i, (e.last_touch, e.insertion_seq))))
                .collect();
            resident.sort_by_key(|r| core::cmp::Reverse(r.1));
            resident.into_iter().take(*capacity).map(|(i, _)| (i, 1.0)).collect()
        }
        SchedulingPolicy::SemanticTopK { k, min_score } => {
            let query = embed(&ctx.query_text);
            let embedded: Vec<(CubeId, Embedding)> = pool
                .iter()
                .map(|&i| (cands[i].id, embed(cands[i].payload.semantic_text())))
                .collect();
            let ranked = semantic_rank(&query, &embedded, *k, *min_score);
            ranked
                .into_iter()
                .filter_map(|(id, s)| pool.iter().find(|&&i| cands[i].id == id).map(|&i| (i, s)))
                .collect()
        }
        SchedulingPolicy::LabelMatch { required, mode } => {
            let query: BTreeSet<String> = required.union(&ctx.query_labels).cloned().collect();
            let mut hits: Vec<usize> = pool
                .iter()
                .copied()
                .filter(|&i| labels_match(&query, *mode, &cands[i].descriptive.labels))
                .collect();
            // priority is only a tie-break hint
            hits.sort_by(|&a, &b| {
                cands[b]
                    .governance
                    .priority
                    .cmp(&cands[a].governance.priority)
                    .then(cands[a].id.cmp(&cands[b].id))
            });
            hits.into_iter().map(|i| (i, 1.0)).collect()
        }
        SchedulingPolicy::Composite(parts) => {
            let mut filtered: Vec<usize> = pool.to_vec();
            let mut first_filter: Option<Vec<(usize, f64)>> = None;
            for p in parts.iter().filter(|p| !p.is_semantic()) {
                let sel = select(ctx, cands, &filtered, p, cache);
                let keep: BTreeSet<usize> = sel.iter().map(|(i, _)| *i).collect();
                filtered.retain(|i| keep.contains(i));
                first_filter = Some(match first_filter.take() {
                    None => sel,
                    Some(prev) => prev.into_iter().filter(|(i, _)| keep.contains(i)).collect(),
                });
            }
            let mut semantic = parts.iter().filter(|p| p.is_semantic());
            match semantic.next() {
                Some(p) => {
                    let mut ranked = select(ctx, cands, &filtered, p, cache);
                    for extra in semantic {
                        let keep: BTreeSet<usize> =
                            select(ctx, cands, &filtered, extra, cache).into_iter().map(|x| x.0).collect();
                        ranked.retain(|(i, _)| keep.contains(i));
                    }
                    ranked
                }
                None => match first_filter {
                    Some(order) => order.into_iter().filter(|(i, _)| filtered.contains(i)).collect(),
                    None => {
                        let mut ids = filtered;
                        ids.sort_by_key(|&i| cands[i].id);
                        ids.into_iter().map(|i| (i, 1.0)).collect()
                    }
                },
            }
        }
    }
}

/// A cube chosen for injection, with its behavioral indicators updated.
#[derive(Debug, Clone, PartialEq)]
pub struct Scheduled {
    pub cube: MemCube,
    pub score: f64,
    pub tokens: u64,
}

/// Selects the injection set. Candidates must already be filtered for the
/// principal's Read and Schedule rights. Ranked cubes are taken in order
/// while the running token total stays within budget; selection stops at
/// the first cube that does not fit.
pub fn schedule(
    ctx: &QueryContext,
    candidates: &[MemCube],
    policy: &SchedulingPolicy,
    cache: &mut HotCache,
    now: Timestamp,
) -> Vec<Scheduled> {
    if ctx.token_budget == 0 {
        return Vec::new();
    }
    let ranked = rank_candidates(ctx, candidates, policy, cache);
    let mut used = 0u64;
    let mut out = Vec::new();
    for (i, score) in ranked {
        let cube = &candidates[i];
        let tokens = cube.payload.token_estimate();
        if used + tokens > ctx.token_budget {
            break;
        }
        used += tokens;
        let relevance = score.clamp(0.0, 1.0);
        let updated = cube
            .record_access(AccessKind::Inject, Some(relevance), now)
            .expect("relevance clamped into [0,1]");
        cache.touch_next(cube.id);
        out.push(Scheduled { cube: updated, score, tokens });
    }
    out
}
