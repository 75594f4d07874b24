//! Property runners shared by the core tests and the acceptance suite.
//!
//! Every runner takes a trial count, a seed and a thread count, and returns
//! a one-line summary or the first disagreement found.

use std::collections::{BTreeMap, BTreeSet};

use memos_core::governance::{
    decide_access, verify_audit_chain, verify_audit_log, AccessDecision, AuditAction, AuditChain, AuditDraft,
    DenyReason, Outcome,
};
use memos_core::lifecycle::{
    expire_sweep, Genesis, LifecycleError, LifecycleEvent, LifecycleRecord, LifecycleState, ThawState,
    TransitionIntent,
};
use memos_core::memcube::{validate, Action, Origin, Payload, Sensitivity};
use memos_core::mip::{self, MipVersion, TrustPolicy, LOCAL_VERSION};
use memos_core::scheduler::{
    apply_transformation, embed, evaluate_transformations, label_match, lineage_detail, schedule, semantic_rank,
    HotCache, LabelMode, QueryContext, SchedulingPolicy, StubTranscoder, TransformationRule,
};
use memos_core::{canon, CubeId, MemCube, PrincipalId};
use rand::seq::SliceRandom;
use rand::Rng;

use super::gen::{self, TestRng, DAY_MS};
use super::oracle::{self, RefErr, RefEvent};

pub type Verdict = Result<String, String>;

/// Runs `f(i, rng_i)` for `i in 0..n` over `threads` workers; each trial has
/// its own RNG derived from `(seed, i)`, so results do not depend on the
/// thread count.
pub fn par<T: Send>(
    n: usize,
    seed: u64,
    threads: usize,
    f: impl Fn(usize, &mut TestRng) -> Result<T, String> + Sync,
) -> Result<Vec<T>, String> {
    let threads = threads.max(1);
    let f = &f;
    let mut parts: Vec<Result<Vec<(usize, T)>, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                s.spawn(move || {
                    let mut out = Vec::new();
                    for i in (t..n).step_by(threads) {
                        let mut r = gen::rng(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                        out.push((i, f(i, &mut r)?));
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut all = Vec::with_capacity(n);
    for p in parts.drain(..) {
        all.extend(p?);
    }
    all.sort_by_key(|(i, _)| *i);
    Ok(all.into_iter().map(|(_, t)| t).collect())
}

// ------------------------------------------------------------ lifecycle

fn random_event(r: &mut TestRng, me: CubeId, hist_len: usize) -> (LifecycleEvent, RefEvent) {
    match r.gen_range(0..10) {
        0 => (LifecycleEvent::Activate, RefEvent::Activate),
        1 => (LifecycleEvent::Archive, RefEvent::Archive),
        2 => (LifecycleEvent::Freeze, RefEvent::Freeze),
        3 => (LifecycleEvent::Unfreeze, RefEvent::Unfreeze),
        4 if r.gen_bool(0.3) => (LifecycleEvent::Expire, RefEvent::Expire),
        5 if r.gen_bool(0.3) => {
            let into = if r.gen_bool(0.3) { me } else { CubeId(r.gen_range(1..1000)) };
            (LifecycleEvent::Merge { into }, RefEvent::Merge(into.0))
        }
        6 | 7 => {
            let text = if r.gen_bool(0.05) { String::new() } else { gen::words(r, 1, 6) };
            let payload = Payload::Plaintext { text: text.clone(), format_tag: "text".into() };
            (LifecycleEvent::Commit { payload }, RefEvent::Commit(text))
        }
        8 | 9 => {
            let v = r.gen_range(0..=hist_len as u64 + 2);
            (LifecycleEvent::Rollback { to_version: v }, RefEvent::Rollback(v))
        }
        _ => (LifecycleEvent::Activate, RefEvent::Activate),
    }
}

fn err_class(e: &LifecycleError) -> RefErr {
    match e {
        LifecycleError::IllegalTransition { .. } => RefErr::Illegal,
        LifecycleError::UnknownVersion(_) => RefErr::Unknown,
        LifecycleError::MergeIntoSelf => RefErr::SelfMerge,
        LifecycleError::Cube(_) => RefErr::BadPayload,
    }
}

/// Random event sequences against the reference machine, with history,
/// rollback-fidelity and hook checks after every step.
pub fn lifecycle_soundness(sequences: usize, seed: u64, threads: usize) -> Verdict {
    let counts = par(sequences, seed, threads, |i, r| {
        let id = CubeId(r.gen_range(1..1000));
        let cube = gen::plain_cube(r, id, 0);
        let mut rec = LifecycleRecord::genesis(&cube, Genesis::Created, 0);
        let mut ref_state = oracle::RefState::Gen;
        let mut hist = vec![cube.payload.semantic_text().to_string()];
        let mut hook: Vec<TransitionIntent> = Vec::new();
        let mut rollbacks = 0u64;
        let len = r.gen_range(1..=24);
        for step in 0..len {
            let now = (step as u64 + 1) * 1000;
            let (ev, rev) = random_event(r, id, hist.len());
            let before_hook = hook.len();
            let got = rec.transition(&ev, now, &mut hook);
            let want = oracle::ref_step(id.0, ref_state, &mut hist, &rev);
            let fail = |m: String| format!("sequence {i} step {step} {ev:?}: {m}");
            match (got, want) {
                (Ok(next), Ok(s)) => {
                    if oracle::to_ref_state(next.state) != s {
                        return Err(fail(format!("state {:?} vs reference {s:?}", next.state)));
                    }
                    if next.versions[..rec.versions.len()] != rec.versions[..] {
                        return Err(fail("history prefix rewritten".into()));
                    }
                    if hook.len() != before_hook + 1 {
                        return Err(fail("transition not reported to hook".into()));
                    }
                    next.check_history().map_err(&fail)?;
                    let texts: Vec<&str> = next.versions.iter().map(|v| v.payload.semantic_text()).collect();
                    if texts != hist.iter().map(String::as_str).collect::<Vec<_>>() {
                        return Err(fail(format!("payload history {texts:?} vs {hist:?}")));
                    }
                    if let LifecycleEvent::Rollback { to_version } = ev {
                        rollbacks += 1;
                        let target = next.version(to_version).unwrap().payload.canonical_bytes();
                        if next.head().payload.canonical_bytes() != target {
                            return Err(fail("rollback head differs from target bytes".into()));
                        }
                        if next.head_version != rec.head_version + 1 {
                            return Err(fail("rollback did not add a version".into()));
                        }
                    }
                    rec = next;
                    ref_state = s;
                }
                (Err(e), Err(w)) if err_class(&e) == w => {
                    if hook.len() != before_hook {
                        return Err(fail("failed transition reached hook".into()));
                    }
                }
                (got, want) => return Err(fail(format!("implementation {got:?} vs reference {want:?}"))),
            }
        }
        Ok((len as u64, rollbacks))
    })?;
    let events: u64 = counts.iter().map(|c| c.0).sum();
    let rollbacks: u64 = counts.iter().map(|c| c.1).sum();
    Ok(format!("{sequences} sequences, {events} events, {rollbacks} rollbacks checked"))
}

/// Expire sweep against the brute-force rule, including freeze exemption.
pub fn expiry_population(populations: usize, size: usize, seed: u64) -> Verdict {
    let mut total = 0;
    for trial in par(populations, seed, 1, |_, r| {
        let now = r.gen_range(10 * DAY_MS..40 * DAY_MS);
        let mut cubes = Vec::new();
        let mut records = BTreeMap::new();
        for n in 0..size {
            let born = now.saturating_sub(r.gen_range(0..5 * DAY_MS));
            let mut c = gen::plain_cube(r, CubeId(n as u128 + 1), born);
            c.governance.ttl_s = r.gen_bool(0.5).then(|| r.gen_range(1..3 * 86_400));
            c.governance.decay = r.gen_bool(0.5).then(|| memos_core::Decay {
                window_s: r.gen_range(1..3 * 86_400),
                min_accesses: r.gen_range(0..4),
            });
            c.behavioral = gen::behavioral(r, now, 6, 4 * DAY_MS);
            let state = *[
                LifecycleState::Generated,
                LifecycleState::Active,
                LifecycleState::Archived,
                LifecycleState::Frozen { prior: ThawState::Active },
                LifecycleState::Frozen { prior: ThawState::Archived },
                LifecycleState::Expired,
            ]
            .choose(r)
            .unwrap();
            let mut rec = LifecycleRecord::genesis(&c, Genesis::Created, 0);
            rec.state = state;
            records.insert(c.id, rec);
            cubes.push(c);
        }
        let want: BTreeSet<CubeId> =
            cubes.iter().filter(|c| oracle::ref_expires(c, records[&c.id].state, now)).map(|c| c.id).collect();
        let frozen: BTreeSet<CubeId> =
            records.iter().filter(|(_, r)| r.state.is_frozen()).map(|(id, _)| *id).collect();
        let got = expire_sweep(&mut records, &cubes, now, &mut ());
        if got != want {
            return Err(format!("sweep {got:?} vs oracle {want:?}"));
        }
        if !got.is_disjoint(&frozen) {
            return Err("frozen cube expired".into());
        }
        if got.iter().any(|id| records[id].state != LifecycleState::Expired) {
            return Err("swept cube not Expired".into());
        }
        Ok(got.len())
    })? {
        total += trial;
    }
    Ok(format!("{populations} populations of {size}, {total} expirations"))
}

// ------------------------------------------------------------ scheduler

pub fn lru_equivalence(workloads: usize, ops: usize, seed: u64, threads: usize) -> Verdict {
    let victims = par(workloads, seed, threads, |w, r| {
        let cap = if w % 2 == 0 { 64 } else { r.gen_range(1..=80) };
        let pool = r.gen_range(cap / 2 + 1..=cap * 3);
        let mut cache = HotCache::new(cap).unwrap();
        let mut reference = oracle::LruRef::new(cap);
        let mut n = 0u64;
        for op in 0..ops {
            if r.gen_bool(0.8) {
                // skewed: low ids are hot
                let id = CubeId(r.gen_range(0..pool).min(r.gen_range(0..pool)) as u128);
                let (a, b) = (cache.touch_next(id), reference.touch(id));
                if a != b {
                    return Err(format!("workload {w} op {op}: touch victim {a:?} vs {b:?}"));
                }
                n += a.is_some() as u64;
            } else {
                let (a, b) = (cache.evict().ok(), reference.evict());
                if a != b {
                    return Err(format!("workload {w} op {op}: evict {a:?} vs {b:?}"));
                }
                n += a.is_some() as u64;
            }
            if cache.len() > cap || cache.len() != reference.len() {
                return Err(format!("workload {w}: size {} (cap {cap})", cache.len()));
            }
        }
        if cache.most_recent_first() != reference.most_recent_first() {
            return Err(format!("workload {w}: final order differs"));
        }
        Ok(n)
    })?;
    Ok(format!("{workloads} workloads x {ops} ops, {} victims matched", victims.iter().sum::<u64>()))
}

pub fn rank_equivalence(corpora: usize, max_size: usize, seed: u64, threads: usize) -> Verdict {
    let sizes = par(corpora, seed, threads, |c, r| {
        let n = r.gen_range(1..=max_size);
        let mut cands: Vec<(CubeId, String)> = Vec::with_capacity(n);
        for i in 0..n {
            let text = match cands.last() {
                Some((_, t)) if r.gen_bool(0.05) => t.clone(),
                _ if r.gen_bool(0.02) => "!!".to_string(),
                _ => gen::words(r, 1, 8),
            };
            cands.push((CubeId((i as u128 + 1) * 7919 % 100_003), text));
        }
        let query = if r.gen_bool(0.02) { ".,;".to_string() } else { gen::words(r, 1, 5) };
        let k = r.gen_range(1..=50);
        let min_score = r.gen_range(-0.5..0.9);
        let embedded: Vec<(CubeId, memos_core::scheduler::Embedding)> =
            cands.iter().map(|(id, t)| (*id, embed(t))).collect();
        for ((_, e), (_, t)) in embedded.iter().zip(&cands) {
            let norm = e.norm();
            if !(e.is_zero() || (norm - 1.0).abs() <= 1e-6) {
                return Err(format!("embedding norm {norm} for {t:?}"));
            }
            let want = oracle::ref_embed(t);
            if e.values().iter().zip(want.iter()).any(|(a, b)| (a - b).abs() > 1e-12) {
                return Err(format!("embedding of {t:?} differs from reference"));
            }
        }
        let got = semantic_rank(&embed(&query), &embedded, k, min_score);
        let want = oracle::ref_rank(&query, &cands, k, min_score);
        let same = got.len() == want.len()
            && got.iter().zip(&want).all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() <= 1e-12);
        if !same {
            return Err(format!("corpus {c} (n={n}, k={k}, min={min_score}): {got:?} vs {want:?}"));
        }
        Ok(n)
    })?;
    Ok(format!("{corpora} corpora, {} candidates ranked", sizes.iter().sum::<usize>()))
}

pub fn label_equivalence(trials: usize, seed: u64) -> Verdict {
    par(trials, seed, 1, |t, r| {
        let cubes: Vec<MemCube> = (0..100).map(|i| gen::plain_cube(r, CubeId(i + 1), 0)).collect();
        let q = gen::labels(r, 3);
        for (mode, all) in [(LabelMode::All, true), (LabelMode::Any, false)] {
            let got = label_match(&q, mode, &cubes);
            let want: BTreeSet<CubeId> = cubes
                .iter()
                .filter(|c| oracle::ref_label_match(&q, all, &c.descriptive.labels))
                .map(|c| c.id)
                .collect();
            if got != want {
                return Err(format!("trial {t} {mode:?} {q:?}: {got:?} vs {want:?}"));
            }
        }
        Ok(())
    })?;
    Ok(format!("{trials} label-match populations of 100"))
}

fn random_policy(r: &mut TestRng) -> SchedulingPolicy {
    match r.gen_range(0..5) {
        0 => SchedulingPolicy::Lru { capacity: r.gen_range(1..20) },
        1 => SchedulingPolicy::SemanticTopK { k: r.gen_range(1..15), min_score: r.gen_range(0.0..0.5) },
        2 => SchedulingPolicy::LabelMatch {
            required: gen::labels(r, 2),
            mode: if r.gen_bool(0.5) { LabelMode::All } else { LabelMode::Any },
        },
        _ => SchedulingPolicy::Composite(vec![
            SchedulingPolicy::LabelMatch { required: gen::labels(r, 2), mode: LabelMode::Any },
            SchedulingPolicy::SemanticTopK { k: 10, min_score: 0.0 },
        ]),
    }
}

/// Oracle ordering for the policy shapes produced by [`random_policy`].
fn ref_order(ctx: &QueryContext, cands: &[MemCube], p: &SchedulingPolicy, residents: &[CubeId]) -> Vec<CubeId> {
    let texts = |cs: &[&MemCube]| -> Vec<(CubeId, String)> {
        cs.iter().map(|c| (c.id, c.payload.semantic_text().to_string())).collect()
    };
    match p {
        SchedulingPolicy::Lru { capacity } => residents
            .iter()
            .filter(|id| cands.iter().any(|c| c.id == **id))
            .take(*capacity)
            .copied()
            .collect(),
        SchedulingPolicy::SemanticTopK { k, min_score } => {
            let all: Vec<&MemCube> = cands.iter().collect();
            oracle::ref_rank(&ctx.query_text, &texts(&all), *k, *min_score).into_iter().map(|x| x.0).collect()
        }
        SchedulingPolicy::LabelMatch { required, mode } => {
            let q: BTreeSet<String> = required.union(&ctx.query_labels).cloned().collect();
            let mut hits: Vec<&MemCube> = cands
                .iter()
                .filter(|c| oracle::ref_label_match(&q, *mode == LabelMode::All, &c.descriptive.labels))
                .collect();
            hits.sort_by(|a, b| b.governance.priority.cmp(&a.governance.priority).then(a.id.cmp(&b.id)));
            hits.into_iter().map(|c| c.id).collect()
        }
        SchedulingPolicy::Composite(parts) => {
            let (SchedulingPolicy::LabelMatch { required, .. }, SchedulingPolicy::SemanticTopK { k, min_score }) =
                (&parts[0], &parts[1])
            else {
                unreachable!()
            };
            let q: BTreeSet<String> = required.union(&ctx.query_labels).cloned().collect();
            let kept: Vec<&MemCube> =
                cands.iter().filter(|c| oracle::ref_label_match(&q, false, &c.descriptive.labels)).collect();
            oracle::ref_rank(&ctx.query_text, &texts(&kept), *k, *min_score).into_iter().map(|x| x.0).collect()
        }
    }
}

pub fn schedule_equivalence(runs: usize, seed: u64, threads: usize) -> Verdict {
    let selected = par(runs, seed, threads, |run, r| {
        let n = if run % 4 == 0 { 30 } else { r.gen_range(0..40) };
        let cands: Vec<MemCube> = (0..n).map(|i| gen::plain_cube(r, CubeId(i as u128 + 1), 0)).collect();
        let mut cache = HotCache::new(r.gen_range(1..24)).unwrap();
        for _ in 0..r.gen_range(0..40) {
            cache.touch_next(CubeId(r.gen_range(1..50)));
        }
        let residents = cache.most_recent_first();
        let mut ctx = QueryContext::new(gen::principal(r), gen::words(r, 1, 4), r.gen_range(0..120));
        ctx.query_labels = gen::labels(r, 2);
        let policy = if run % 4 == 0 {
            SchedulingPolicy::Composite(vec![
                SchedulingPolicy::LabelMatch { required: gen::labels(r, 2), mode: LabelMode::Any },
                SchedulingPolicy::SemanticTopK { k: 10, min_score: 0.0 },
            ])
        } else {
            random_policy(r)
        };
        let now = 1_000_000;
        let got = schedule(&ctx, &cands, &policy, &mut cache, now);
        let tokens = |id: CubeId| cands.iter().find(|c| c.id == id).unwrap().payload.token_estimate();
        let want = oracle::ref_budget_prefix(&ref_order(&ctx, &cands, &policy, &residents), tokens, ctx.token_budget);
        let got_ids: Vec<CubeId> = got.iter().map(|s| s.cube.id).collect();
        let fail = |m: String| format!("run {run} {policy:?} budget {}: {m}", ctx.token_budget);
        if got_ids != want {
            return Err(fail(format!("{got_ids:?} vs oracle {want:?}")));
        }
        let used: u64 = got.iter().map(|s| s.tokens).sum();
        if used > ctx.token_budget {
            return Err(fail(format!("used {used} tokens")));
        }
        // later injections may evict earlier ones from a small cache
        let resident_from = got.len().saturating_sub(cache.capacity());
        for (n, s) in got.iter().enumerate() {
            let orig = cands.iter().find(|c| c.id == s.cube.id).unwrap();
            if s.cube.behavioral.access_count_total != orig.behavioral.access_count_total + 1
                || s.cube.behavioral.last_access != Some(now)
                || (n >= resident_from && !cache.contains(s.cube.id))
            {
                return Err(fail(format!("{} not recorded as injected", s.cube.id)));
            }
        }
        Ok(got.len())
    })?;
    Ok(format!("{runs} schedule runs, {} cubes injected, budget never exceeded", selected.iter().sum::<usize>()))
}

// ------------------------------------------------------- transformations

fn transform_subject(r: &mut TestRng, id: CubeId, now: u64) -> (MemCube, LifecycleRecord) {
    let created = now - r.gen_range(0..60 * DAY_MS);
    let payload = match r.gen_range(0..3) {
        0 => Payload::plaintext(gen::words(r, 1, 8)),
        1 => Payload::Activation {
            template_text: gen::words(r, 1, 8),
            kv_descriptor: gen::bytes(r, 16),
            token_estimate: r.gen_range(1..100),
        },
        _ => Payload::Parametric {
            adapter_name: gen::adapter_name(r),
            adapter_descriptor: gen::bytes(r, 32),
            domain_tags: vec![],
        },
    };
    let mut d = memos_core::DescriptiveMeta::new(gen::semantic_type(r));
    d.labels = gen::labels(r, 2);
    let g = memos_core::GovernanceAttrs::owned_by(gen::principal(r));
    let cube = memos_core::create_cube(id, payload.clone(), d, g, created).unwrap();
    let mut rec = LifecycleRecord::genesis(&cube, Genesis::Created, created);
    rec = rec.transition(&LifecycleEvent::Activate, created, &mut ()).unwrap();
    // edits land near the 7-day quiet boundary
    let mut ages: Vec<u64> = (0..r.gen_range(0..3))
        .map(|_| [r.gen_range(0..14 * DAY_MS), 7 * DAY_MS, 7 * DAY_MS + 1].choose(r).copied().unwrap())
        .collect();
    ages.sort_unstable_by(|a, b| b.cmp(a));
    for age in ages {
        let at = (now - age).max(created);
        if r.gen_bool(0.5) || rec.head_version == 1 {
            rec = rec.commit_version(payload.clone(), at, &mut ()).unwrap();
        } else {
            rec = rec.rollback(1, at, &mut ()).unwrap();
        }
    }
    if r.gen_bool(0.1) {
        rec.state = *[LifecycleState::Archived, LifecycleState::Frozen { prior: ThawState::Active }].choose(r).unwrap();
    }
    let mut behavioral = gen::behavioral(r, now, 9, 2 * 3_600_000);
    behavioral.access_count_total = behavioral.access_log.len() as u64 + r.gen_range(0..25);
    behavioral.relevance_ema = *[0.6999999, 0.7, 0.7000001, r.gen::<f64>()].choose(r).unwrap();
    behavioral.last_access = match r.gen_range(0..4) {
        0 => None,
        1 => Some(now - 30 * DAY_MS),
        2 => Some(now - 30 * DAY_MS - 1),
        _ => behavioral.last_access.or(Some(now - r.gen_range(0..60 * DAY_MS))),
    };
    let mut head = rec.cube_at(None, &cube.governance, &behavioral).unwrap();
    head.behavioral = behavioral;
    (head, rec)
}

pub fn transformation_closure(population: usize, seed: u64, threads: usize) -> Verdict {
    let rules = TransformationRule::defaults();
    let produced = par(population, seed, threads, |i, r| {
        let now = 100 * DAY_MS + r.gen_range(0..DAY_MS);
        let (cube, rec) = transform_subject(r, CubeId(i as u128 + 1), now);
        let got = evaluate_transformations(&cube, &rec, &rules, now);
        if got != evaluate_transformations(&cube, &rec, &rules, now) {
            return Err(format!("cube {i}: evaluation not pure"));
        }
        let want = oracle::ref_transform(&cube, &rec, now);
        if got.map(|d| d.to) != want {
            return Err(format!("cube {i}: decision {:?} vs oracle {want:?}", got.map(|d| d.kind)));
        }
        let Some(d) = got else { return Ok(None) };
        let pair = (d.from, d.to);
        if !oracle::ARROWS.contains(&pair) {
            return Err(format!("cube {i}: produced arrow {pair:?}"));
        }
        let mut hook: Vec<TransitionIntent> = Vec::new();
        let new_id = CubeId(1 << 100 | i as u128);
        let t = apply_transformation(&cube, &rec, &d, &StubTranscoder, new_id, now, &mut hook)
            .map_err(|e| format!("cube {i}: apply failed: {e}"))?;
        let ok = t.cube.class() == d.to
            && t.cube.version == 1
            && t.cube.descriptive.origin == Origin::Transformation
            && t.cube.descriptive.origin_detail == lineage_detail(cube.id, cube.version)
            && t.record.state == LifecycleState::Active
            && t.source_record.state == LifecycleState::Archived
            && validate(&t.cube).is_empty();
        if !ok {
            return Err(format!("cube {i}: transformation contract violated: {:?}", t.cube));
        }
        if let (Payload::Plaintext { text, .. }, Payload::Activation { template_text, .. }) = (&cube.payload, &t.cube.payload)
        {
            if text != template_text {
                return Err(format!("cube {i}: template text differs"));
            }
        }
        if let Payload::Parametric { adapter_descriptor, .. } = &t.cube.payload {
            if *adapter_descriptor != canon::sha256(&cube.payload.canonical_bytes()).to_vec() {
                return Err(format!("cube {i}: descriptor is not the source digest"));
            }
        }
        Ok(Some(pair))
    })?;
    let mut by_arrow: BTreeMap<String, usize> = BTreeMap::new();
    for p in produced.iter().flatten() {
        *by_arrow.entry(format!("{}->{}", p.0, p.1)).or_default() += 1;
    }
    if population >= 500 && by_arrow.len() != oracle::ARROWS.len() {
        return Err(format!("generator covered only {by_arrow:?}"));
    }
    Ok(format!("{population} cubes, decisions agree, arrows {by_arrow:?}"))
}

// ----------------------------------------------------------- governance

pub fn acl_truth_table(matrices: usize, seed: u64) -> Verdict {
    let mut checks = 0;
    for n in par(matrices, seed, 1, |m, r| {
        let g = gen::governance(r);
        let mut n = 0;
        for p in gen::PRINCIPALS {
            let p = PrincipalId::new(*p).unwrap();
            for a in Action::ALL {
                let got = decide_access(&p, &g, a);
                let want = oracle::ref_allowed(&p, &g, a);
                if got.is_allowed() != want {
                    return Err(format!("matrix {m}: {p} {a:?} -> {got:?}, oracle {want}"));
                }
                if got == AccessDecision::Denied(DenyReason::RestrictedWildcard) && g.sensitivity != Sensitivity::Restricted
                {
                    return Err(format!("matrix {m}: restricted reason on {:?} cube", g.sensitivity));
                }
                n += 1;
            }
        }
        Ok(n)
    })? {
        checks += n;
    }
    Ok(format!("{matrices} ACL matrices, {checks} decisions match"))
}

pub fn audit_draft(r: &mut TestRng, at: u64) -> AuditDraft {
    AuditDraft {
        at,
        principal: gen::principal(r),
        action: *AuditAction::ALL.choose(r).unwrap(),
        cube_id: CubeId(r.gen()),
        outcome: if r.gen_bool(0.8) { Outcome::Allowed } else { Outcome::Denied },
        detail: if r.gen_bool(0.5) { gen::words(r, 0, 5) } else { gen::wild_text(r, 20) },
    }
}

/// Single-bit flips anywhere in a serialized log must be reported at the
/// flipped line.
pub fn audit_tamper(trials: usize, seed: u64, threads: usize) -> Verdict {
    par(trials, seed, threads, |t, r| {
        let mut chain = AuditChain::new();
        for i in 0..r.gen_range(1..60) {
            chain.append_audit(audit_draft(r, i * 10));
        }
        verify_audit_chain(chain.records()).map_err(|s| format!("trial {t}: fresh chain fails at {s}"))?;
        let mut log = Vec::new();
        let mut line_of = Vec::new();
        for (i, rec) in chain.records().iter().enumerate() {
            let line = rec.to_line();
            line_of.extend(std::iter::repeat_n(i as u64 + 1, line.len() + 1));
            log.extend(line);
            log.push(b'\n');
        }
        if verify_audit_log(&log) != Ok(chain.len()) {
            return Err(format!("trial {t}: serialized log fails"));
        }
        let bit = r.gen_range(0..log.len() * 8);
        log[bit / 8] ^= 1 << (bit % 8);
        match verify_audit_log(&log) {
            Err(s) if s == line_of[bit / 8] => Ok(()),
            other => Err(format!("trial {t}: flip in line {} reported {other:?}", line_of[bit / 8])),
        }
    })?;
    Ok(format!("{trials} single-bit tamper trials, all detected at the flipped record"))
}

// ------------------------------------------------------------- interchange

pub const MIP_KEY: &[u8] = b"interchange-test-key";

fn producer() -> PrincipalId {
    PrincipalId::new("alice").unwrap()
}

/// dump -> load -> dump byte identity, plus cube-level equality.
pub fn mip_roundtrip(sets: usize, cubes_per_set: usize, seed: u64) -> Verdict {
    par(sets, seed, 1, |s, r| {
        let cubes: Vec<MemCube> = (0..cubes_per_set).map(|_| gen::cube(r)).collect();
        let created = r.gen_range(0..u64::MAX / 2);
        let a = mip::dump(&cubes, &producer(), created, Some(MIP_KEY)).map_err(|e| e.to_string())?;
        let trust = TrustPolicy::RequireSignature { key: MIP_KEY.to_vec() };
        let loaded = mip::load(&a, &trust, LOCAL_VERSION).map_err(|e| format!("set {s}: load failed: {e}"))?;
        for (orig, back) in cubes.iter().zip(&loaded.cubes) {
            if back.canonical_encode() != orig.with_reset_behavior().canonical_encode() {
                return Err(format!("set {s}: cube {} not reproduced", orig.id));
            }
        }
        let b = mip::dump(&loaded.cubes, &producer(), created, Some(MIP_KEY)).unwrap();
        if a != b {
            return Err(format!("set {s}: second dump differs"));
        }
        // unsigned archives of non-restricted cubes round-trip too
        let open: Vec<MemCube> =
            cubes.iter().filter(|c| c.governance.sensitivity != Sensitivity::Restricted).cloned().collect();
        let u = mip::dump(&open, &producer(), created, None).unwrap();
        let lu = mip::load(&u, &TrustPolicy::AcceptUnsigned, LOCAL_VERSION).map_err(|e| e.to_string())?;
        if mip::dump(&lu.cubes, &producer(), created, None).unwrap() != u {
            return Err(format!("set {s}: unsigned round trip differs"));
        }
        Ok(())
    })?;
    Ok(format!("{sets} sets of {cubes_per_set} cubes round-trip byte-identically"))
}

/// Replaces the manifest and re-signs, for version-rule tests.
pub fn with_manifest_version(archive: &[u8], version: &str, key: &[u8]) -> Vec<u8> {
    let lay = mip::layout(archive).unwrap();
    let mut m: mip::Manifest = canon::decode(&archive[lay.manifest.clone()]).unwrap();
    m.mip_version = version.parse().unwrap();
    let mb = canon::encode(&m);
    let mut out = mip::MAGIC.to_vec();
    out.extend_from_slice(&(mb.len() as u32).to_be_bytes());
    out.extend_from_slice(&mb);
    out.extend_from_slice(&archive[lay.manifest.end..lay.signature.start]);
    let sig = memos_core::governance::hmac_sha256(key, &[&out]);
    out.extend_from_slice(&sig);
    out
}

pub fn mip_versions(seed: u64) -> Verdict {
    let mut r = gen::rng(seed);
    let cubes: Vec<MemCube> = (0..5).map(|_| gen::cube(&mut r)).collect();
    let a = mip::dump(&cubes, &producer(), 1, Some(MIP_KEY)).unwrap();
    let trust = TrustPolicy::RequireSignature { key: MIP_KEY.to_vec() };
    for major in ["0.9", "2.0", "3.1"] {
        match mip::load(&with_manifest_version(&a, major, MIP_KEY), &trust, LOCAL_VERSION) {
            Err(mip::MipError::VersionIncompatible { .. }) => {}
            other => return Err(format!("{major}: {other:?}")),
        }
    }
    for minor in ["1.1", "1.3"] {
        match mip::load(&with_manifest_version(&a, minor, MIP_KEY), &trust, LOCAL_VERSION) {
            Ok(l) if l.report.minor_version_warning == Some(minor.parse::<MipVersion>().unwrap()) => {}
            other => return Err(format!("{minor}: {other:?}")),
        }
    }
    match mip::load(&a, &trust, LOCAL_VERSION) {
        Ok(l) if l.report.minor_version_warning.is_none() => {}
        other => return Err(format!("1.0: {other:?}")),
    }
    Ok("major 0/2/3 rejected, minor 1.1/1.3 accepted with warning, 1.0 clean".into())
}

/// Single-bit flips in signed archives, region chosen uniformly first.
pub fn mip_corruption(trials: usize, seed: u64, threads: usize) -> Verdict {
    let trust = TrustPolicy::RequireSignature { key: MIP_KEY.to_vec() };
    let classes = par(trials, seed, threads, |t, r| {
        let cubes: Vec<MemCube> = (0..r.gen_range(1..6)).map(|_| gen::cube(r)).collect();
        let a = mip::dump(&cubes, &producer(), r.gen_range(0..1 << 40), Some(MIP_KEY)).unwrap();
        let reg = oracle::regions(&a);
        let e = reg.entries.choose(r).unwrap().clone();
        let ranges = [
            0..4,
            4..8,
            reg.manifest.clone(),
            e[0].clone(),
            e[1].clone(),
            e[2].clone(),
            e[3].clone(),
            e[4].clone(),
            reg.signature.clone(),
        ];
        let range = ranges.choose(r).unwrap().clone();
        let range = if range.is_empty() { reg.signature.clone() } else { range };
        let byte = r.gen_range(range);
        let bit = byte * 8 + r.gen_range(0..8);
        let expect = oracle::classify_flip(&a, bit);
        let mut bad = a.clone();
        bad[byte] ^= 1 << (bit % 8);
        match mip::load(&bad, &trust, LOCAL_VERSION) {
            Err(e) if expect.accepts(&e) => Ok(format!("{expect:?}").split('(').next().unwrap().to_string()),
            other => Err(format!("trial {t}: bit {bit} expected {expect:?}, got {other:?}")),
        }
    })?;
    let mut hist: BTreeMap<String, usize> = BTreeMap::new();
    for c in classes {
        *hist.entry(c).or_default() += 1;
    }
    Ok(format!("{trials} corruptions rejected with the expected class {hist:?}"))
}
