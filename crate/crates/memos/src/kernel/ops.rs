use std::collections::{BTreeMap, BTreeSet};

use memos_core::context::assemble_context;
use memos_core::governance::{decide_access, watermark_apply, AuditAction, AuditRecord, Outcome};
use memos_core::lifecycle::{Genesis, LifecycleEvent, LifecycleRecord, LifecycleState, TransitionIntent};
use memos_core::mip::{self, TrustPolicy, LOCAL_VERSION};
use memos_core::operator::{OperatorError, PartitionPath, Relation, TagExpr};
use memos_core::reader::LogFilter;
use memos_core::scheduler::{
    apply_transformation, evaluate_transformations, schedule, tokenize, LabelMode, QueryContext, SchedulingPolicy,
};
use memos_core::{
    create_cube, Action, BehavioralIndicators, CubeId, DescriptiveMeta, GovernanceAttrs, MemCube, Origin, Payload,
    SemanticType, Sensitivity,
};
use serde::{Deserialize, Serialize};

use super::{
    CubeInfo, GovernanceSpec, Kernel, KernelError, LineageHop, LoadReport, Recall, RecallHit, RecallQuery, Session,
    TransformOutcome, Tx, UpdatePatch, Written,
};
use crate::backend::CubeRow;
use crate::store::{StoreEntry, Visibility};

/// Input to [`Kernel::create`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewCube {
    pub payload: Payload,
    #[serde(default = "other_type")]
    pub semantic_type: SemanticType,
    #[serde(default)]
    pub labels: BTreeSet<String>,
    #[serde(default)]
    pub partition: Option<String>,
    #[serde(default)]
    pub governance: GovernanceSpec,
    #[serde(default)]
    pub origin: Option<Origin>,
    #[serde(default)]
    pub origin_detail: String,
}

fn other_type() -> SemanticType {
    SemanticType::Other
}

impl NewCube {
    pub fn text(text: impl Into<String>) -> Self {
        NewCube {
            payload: Payload::plaintext(text),
            semantic_type: SemanticType::Other,
            labels: BTreeSet::new(),
            partition: None,
            governance: GovernanceSpec::default(),
            origin: None,
            origin_detail: String::new(),
        }
    }

    pub fn labels<I: IntoIterator<Item = S>, S: Into<String>>(mut self, labels: I) -> Self {
        self.labels = labels.into_iter().map(Into::into).collect();
        self
    }

    pub fn typed(mut self, t: SemanticType) -> Self {
        self.semantic_type = t;
        self
    }

    pub fn governed(mut self, g: GovernanceSpec) -> Self {
        self.governance = g;
        self
    }
}

fn written(row: &CubeRow) -> Written {
    Written { id: row.id(), version: row.head_version(), state: row.state() }
}

impl Tx<'_> {
    /// First id candidate not taken as seen from this transaction. A
    /// concurrent transaction drawing the same id loses at commit.
    fn fresh_id(&mut self) -> Result<CubeId, KernelError> {
        let mut n = 0;
        loop {
            let id = self.kernel.id_candidate(n);
            if self.load(id)?.is_none() {
                return Ok(id);
            }
            n += 1;
        }
    }

    /// Loads a row for an access-checked op; an unknown id still leaves an
    /// audit record.
    fn target(&mut self, s: &Session, id: CubeId, action: AuditAction, what: &str) -> Result<CubeRow, KernelError> {
        match self.load(id)? {
            Some(r) => Ok(r),
            None => {
                self.kernel.audit(s, action, id, Outcome::Denied, format!("{what}: unknown cube"))?;
                Err(KernelError::UnknownCube(id))
            }
        }
    }

    fn checked(
        &mut self,
        s: &Session,
        id: CubeId,
        action: Action,
        audit: AuditAction,
        what: &str,
    ) -> Result<CubeRow, KernelError> {
        let row = self.target(s, id, audit, what)?;
        self.kernel.check(s, &row, action, audit, what)?;
        Ok(row)
    }

    /// Re-tags a watermarked row after its head changed.
    fn rewatermark(&self, row: &mut CubeRow) {
        if let (Some(key), Some(_)) = (&self.kernel.config.watermark_key, row.governance.watermark) {
            row.governance.watermark = watermark_apply(&row.head(), key).governance.watermark;
        }
    }

    fn transition(
        &mut self,
        s: &Session,
        mut row: CubeRow,
        f: impl FnOnce(&LifecycleRecord, &mut Vec<TransitionIntent>) -> Result<LifecycleRecord, KernelError>,
    ) -> Result<Written, KernelError> {
        let mut intents = Vec::new();
        row.record = f(&row.record, &mut intents)?;
        self.rewatermark(&mut row);
        let w = written(&row);
        self.stage(row);
        self.kernel.audit_intents(s, intents)?;
        Ok(w)
    }

    pub fn create(&mut self, s: &Session, new: &NewCube) -> Result<Written, KernelError> {
        let k = self.kernel;
        let now = k.now();
        let partition = match &new.partition {
            Some(p) => PartitionPath::new(p)?,
            None => k.config.default_partition.clone(),
        };
        let id = self.fresh_id()?;
        let g = &new.governance;
        let mut governance = GovernanceAttrs::owned_by(s.principal.clone());
        governance.acl = g.acl.clone();
        governance.ttl_s = g.ttl_s;
        governance.decay = g.decay;
        if let Some(p) = g.priority {
            governance.priority = p;
        }
        if let Some(x) = g.sensitivity {
            governance.sensitivity = x;
        }
        let descriptive = DescriptiveMeta::new(new.semantic_type)
            .with_labels(new.labels.iter().cloned())
            .with_origin(new.origin.unwrap_or(Origin::UserInput), new.origin_detail.clone());
        let mut cube = create_cube(id, new.payload.clone(), descriptive, governance, now)?;
        if let Some(key) = &k.config.watermark_key {
            cube = watermark_apply(&cube, key);
        }
        let record = LifecycleRecord::genesis(&cube, Genesis::Created, now).transition(
            &LifecycleEvent::Activate,
            now,
            &mut (),
        )?;
        let row = CubeRow { record, governance: cube.governance, behavioral: cube.behavioral, partition, rev: 0 };
        let w = written(&row);
        self.stage(row);
        k.audit(s, AuditAction::Create, id, Outcome::Allowed, format!("create v1 {}", cube.payload.class()))?;
        Ok(w)
    }

    pub fn get(&mut self, s: &Session, id: CubeId, version: Option<u64>) -> Result<CubeInfo, KernelError> {
        let mut row = self.checked(s, id, Action::Read, AuditAction::Read, "get")?;
        let now = self.kernel.now();
        let head = row.head().record_access(memos_core::AccessKind::Read, None, now)?;
        row.behavioral = head.behavioral.clone();
        let cube = match version {
            None => head,
            Some(v) => row.at(v).ok_or(memos_core::lifecycle::LifecycleError::UnknownVersion(v))?,
        };
        let info = CubeInfo { cube, state: row.state(), partition: row.partition.clone() };
        self.stage(row);
        Ok(info)
    }

    pub fn recall(&mut self, s: &Session, q: &RecallQuery) -> Result<Recall, KernelError> {
        let k = self.kernel;
        let now = k.now();
        let n = q.k.unwrap_or(k.config.default_k);
        if n == 0 {
            k.audit(s, AuditAction::Read, CubeId::NIL, Outcome::Denied, "recall: k must be positive")?;
            return Err(OperatorError::ZeroK.into());
        }
        let expr = match q.structural.as_deref().map(TagExpr::parse).transpose() {
            Ok(e) => e,
            Err(e) => {
                k.audit(s, AuditAction::Read, CubeId::NIL, Outcome::Denied, "recall: malformed tag expression")?;
                return Err(OperatorError::from(e).into());
            }
        };
        let ids = self.with_index(|ix| ix.structural_filter(&q.scope, expr.as_ref()));
        let mut candidates = Vec::new();
        for id in ids {
            let Some(row) = self.load(id)? else { continue };
            let gov = &row.governance;
            if row.state() == LifecycleState::Active
                && decide_access(&s.principal, gov, Action::Read).is_allowed()
                && decide_access(&s.principal, gov, Action::Schedule).is_allowed()
            {
                candidates.push(row.head());
            }
        }
        let mut ctx = QueryContext::new(s.principal.clone(), q.text.clone(), q.budget.unwrap_or(k.config.token_budget));
        ctx.query_labels = q.labels.clone();
        let semantic = SchedulingPolicy::SemanticTopK { k: n, min_score: k.config.min_score };
        let by_label = SchedulingPolicy::LabelMatch { required: BTreeSet::new(), mode: LabelMode::Any };
        let policy = match (tokenize(&q.text).is_empty(), q.labels.is_empty()) {
            (_, true) => semantic,
            (true, false) => by_label,
            (false, false) => SchedulingPolicy::Composite(vec![by_label, semantic]),
        };
        let mut selected = schedule(&ctx, &candidates, &policy, self.cache(), now);
        selected.truncate(n);
        k.audit(
            s,
            AuditAction::Read,
            CubeId::NIL,
            Outcome::Allowed,
            format!("recall screened={} selected={}", candidates.len(), selected.len()),
        )?;
        let mut hits = Vec::new();
        let mut cubes = Vec::new();
        for sc in selected {
            let id = sc.cube.id;
            k.audit(s, AuditAction::Schedule, id, Outcome::Allowed, format!("inject score={:.6}", sc.score))?;
            let mut row = self.row(id)?;
            row.behavioral = sc.cube.behavioral.clone();
            self.stage(row);
            self.touched(id);
            hits.push(RecallHit { cube_id: id, version: sc.cube.version, score: sc.score, tokens: sc.tokens });
            cubes.push(sc.cube);
        }
        let context = assemble_context(&cubes, ctx.token_budget);
        let response = k.respond(&q.text, &context);
        Ok(Recall { hits, context, response })
    }

    pub fn update(&mut self, s: &Session, id: CubeId, patch: &UpdatePatch) -> Result<Written, KernelError> {
        let row = self.checked(s, id, Action::Write, AuditAction::Update, "update")?;
        if patch.text.is_none() && patch.labels.is_none() && patch.semantic_type.is_none() {
            return Err(KernelError::InvalidRequest("empty patch".into()));
        }
        let head = row.record.head().clone();
        let mut descriptive = head.descriptive.clone();
        if let Some(l) = &patch.labels {
            descriptive.labels = l.clone();
        }
        if let Some(t) = patch.semantic_type {
            descriptive.semantic_type = t;
        }
        let payload = match (&patch.text, head.payload) {
            (None, p) => p,
            (Some(t), Payload::Plaintext { format_tag, .. }) => Payload::Plaintext { text: t.clone(), format_tag },
            (Some(t), Payload::Activation { kv_descriptor, .. }) => Payload::Activation {
                template_text: t.clone(),
                kv_descriptor,
                token_estimate: memos_core::estimate_tokens(t),
            },
            (Some(_), Payload::Parametric { .. }) => {
                return Err(KernelError::InvalidRequest("parametric cubes have no text".into()))
            }
        };
        let now = self.kernel.now();
        self.transition(s, row, |r, h| Ok(r.commit_content(descriptive, payload, now, h)?))
    }

    pub fn archive(&mut self, s: &Session, id: CubeId) -> Result<Written, KernelError> {
        let row = self.checked(s, id, Action::Write, AuditAction::Update, "archive")?;
        let now = self.kernel.now();
        self.transition(s, row, |r, h| Ok(r.transition(&LifecycleEvent::Archive, now, h)?))
    }

    pub fn activate(&mut self, s: &Session, id: CubeId) -> Result<Written, KernelError> {
        let row = self.checked(s, id, Action::Write, AuditAction::Update, "activate")?;
        let now = self.kernel.now();
        self.transition(s, row, |r, h| Ok(r.transition(&LifecycleEvent::Activate, now, h)?))
    }

    pub fn rollback(&mut self, s: &Session, id: CubeId, to: u64) -> Result<Written, KernelError> {
        let row = self.checked(s, id, Action::Write, AuditAction::Update, "rollback")?;
        let now = self.kernel.now();
        self.transition(s, row, |r, h| Ok(r.rollback(to, now, h)?))
    }

    pub fn freeze(&mut self, s: &Session, id: CubeId, unfreeze: bool) -> Result<Written, KernelError> {
        let what = if unfreeze { "unfreeze" } else { "freeze" };
        let row = self.checked(s, id, Action::Govern, AuditAction::Govern, what)?;
        let now = self.kernel.now();
        let ev = if unfreeze { LifecycleEvent::Unfreeze } else { LifecycleEvent::Freeze };
        self.transition(s, row, |r, h| Ok(r.transition(&ev, now, h)?))
    }

    pub fn merge(&mut self, s: &Session, id: CubeId, into: CubeId) -> Result<Written, KernelError> {
        let row = self.checked(s, id, Action::Write, AuditAction::Update, "merge")?;
        self.checked(s, into, Action::Write, AuditAction::Update, "merge target")?;
        let now = self.kernel.now();
        self.transition(s, row, |r, h| Ok(r.transition(&LifecycleEvent::Merge { into }, now, h)?))
    }

    /// Lineage from the earliest origin to the head of `id`: the source
    /// chain of a transformed cube (up to the version it was derived from)
    /// followed by every local version.
    pub fn provenance(&mut self, s: &Session, id: CubeId) -> Result<Vec<LineageHop>, KernelError> {
        let row = self.checked(s, id, Action::Read, AuditAction::Read, "provenance")?;
        let mut segments = Vec::new();
        let mut seen = BTreeSet::new();
        let mut cur = Some((row, None::<u64>));
        while let Some((row, upto)) = cur.take() {
            if !seen.insert(row.id()) {
                break;
            }
            let hops: Vec<LineageHop> = row
                .record
                .versions
                .iter()
                .filter(|v| upto.is_none_or(|u| v.version <= u))
                .map(|v| LineageHop {
                    cube_id: row.id(),
                    version: v.version,
                    origin: v.descriptive.origin,
                    origin_detail: v.descriptive.origin_detail.clone(),
                    cause: v.cause,
                    committed_at: v.committed_at,
                })
                .collect();
            segments.push(hops);
            if let Genesis::Transformed { from, version } = row.record.genesis_cause() {
                if let Some(src) = self.load(from)? {
                    cur = Some((src, Some(version)));
                }
            }
        }
        Ok(segments.into_iter().rev().flatten().collect())
    }

    /// Audit records matching `filter`. Only admins may read other
    /// principals' records.
    pub fn logquery(&mut self, s: &Session, filter: &LogFilter) -> Result<Vec<AuditRecord>, KernelError> {
        let k = self.kernel;
        let own = filter.principal.as_ref() == Some(&s.principal);
        if !(k.is_admin(&s.principal) || own) {
            k.audit(s, AuditAction::Read, CubeId::NIL, Outcome::Denied, "logquery beyond own records")?;
            return Err(KernelError::AccessDenied { principal: s.principal.clone(), action: Action::Govern, cube: CubeId::NIL });
        }
        let out: Vec<AuditRecord> = k.audit_records()?.into_iter().filter(|r| filter.matches(r)).collect();
        k.audit(s, AuditAction::Read, CubeId::NIL, Outcome::Allowed, format!("logquery matched={}", out.len()))?;
        Ok(out)
    }

    /// Fires the first applicable transformation rule on `id`, if any.
    pub fn transform(&mut self, s: &Session, id: CubeId) -> Result<TransformOutcome, KernelError> {
        let k = self.kernel;
        let row = self.checked(s, id, Action::Write, AuditAction::Transform, "transform")?;
        let now = k.now();
        let cube = row.head();
        let Some(decision) = evaluate_transformations(&cube, &row.record, &k.config.rules, now) else {
            return Ok(TransformOutcome { source: id, created: None, kind: None });
        };
        let new_id = self.fresh_id()?;
        let mut intents = Vec::new();
        let t = apply_transformation(&cube, &row.record, &decision, k.transcoder(), new_id, now, &mut intents)?;
        let mut source = row.clone();
        source.record = t.source_record;
        let mut governance = t.cube.governance.clone();
        if let Some(key) = &k.config.watermark_key {
            governance = watermark_apply(&t.cube, key).governance;
        }
        let created = CubeRow {
            record: t.record,
            governance,
            behavioral: BehavioralIndicators::default(),
            partition: row.partition.clone(),
            rev: 0,
        };
        self.stage(source);
        self.stage(created);
        self.link(new_id, Relation::DerivedFrom, id)?;
        self.transformed(decision.kind);
        k.audit_intents(s, intents)?;
        Ok(TransformOutcome { source: id, created: Some(new_id), kind: Some(decision.kind) })
    }

    /// Expires every due Active or Archived cube. Admin only.
    pub fn expire_sweep(&mut self, s: &Session) -> Result<Vec<CubeId>, KernelError> {
        let k = self.kernel;
        if !k.is_admin(&s.principal) {
            k.audit(s, AuditAction::Expire, CubeId::NIL, Outcome::Denied, "expire sweep")?;
            return Err(KernelError::AccessDenied { principal: s.principal.clone(), action: Action::Govern, cube: CubeId::NIL });
        }
        let now = k.now();
        let mut out = Vec::new();
        for id in k.backend().ids()? {
            let Some(row) = self.load(id)? else { continue };
            if !matches!(row.state(), LifecycleState::Active | LifecycleState::Archived) {
                continue;
            }
            if !memos_core::lifecycle::expiry_due(&row.head(), now) {
                continue;
            }
            self.transition(s, row, |r, h| Ok(r.transition(&LifecycleEvent::Expire, now, h)?))?;
            self.expired();
            out.push(id);
        }
        k.audit(s, AuditAction::Expire, CubeId::NIL, Outcome::Allowed, format!("sweep expired={}", out.len()))?;
        Ok(out)
    }

    pub fn graph_link(&mut self, s: &Session, src: CubeId, rel: Relation, dst: CubeId) -> Result<bool, KernelError> {
        self.checked(s, src, Action::Write, AuditAction::Update, "link")?;
        self.target(s, dst, AuditAction::Update, "link target")?;
        self.link(src, rel, dst)
    }

    /// Imports an archive. Cubes enter in state Generated with fresh
    /// behavioral indicators and need an explicit activate.
    pub fn load_archive(&mut self, s: &Session, bytes: &[u8], partition: Option<&str>) -> Result<LoadReport, KernelError> {
        let k = self.kernel;
        let trust = match &k.config.mip_key {
            Some(key) => TrustPolicy::RequireSignature { key: key.clone() },
            None => TrustPolicy::AcceptUnsigned,
        };
        let loaded = match mip::load(bytes, &trust, LOCAL_VERSION) {
            Ok(l) => l,
            Err(e) => {
                k.audit(s, AuditAction::Import, CubeId::NIL, Outcome::Denied, format!("load rejected: {e}"))?;
                return Err(e.into());
            }
        };
        let partition = match partition {
            Some(p) => PartitionPath::new(p)?,
            None => k.config.default_partition.clone(),
        };
        let now = k.now();
        let mut ids = Vec::new();
        for cube in loaded.cubes {
            if self.load(cube.id)?.is_some() {
                k.audit(s, AuditAction::Import, cube.id, Outcome::Denied, "load: cube exists")?;
                return Err(KernelError::AlreadyExists(cube.id));
            }
            let record = LifecycleRecord::genesis(&cube, Genesis::Imported, now);
            self.stage(CubeRow {
                record,
                governance: cube.governance.clone(),
                behavioral: cube.behavioral.clone(),
                partition: partition.clone(),
                rev: 0,
            });
            k.audit(s, AuditAction::Import, cube.id, Outcome::Allowed, format!("import v{}", cube.version))?;
            ids.push(cube.id);
        }
        let r = loaded.report;
        Ok(LoadReport {
            ids,
            signature: r.signature,
            minor_version_warning: r.minor_version_warning,
            producer: r.manifest.producer,
        })
    }
}

impl Kernel {
    pub fn create(&self, s: &Session, new: &NewCube) -> Result<Written, KernelError> {
        self.run(|tx| tx.create(s, new))
    }

    pub fn get(&self, s: &Session, id: CubeId, version: Option<u64>) -> Result<CubeInfo, KernelError> {
        self.run(|tx| tx.get(s, id, version))
    }

    pub fn recall(&self, s: &Session, q: &RecallQuery) -> Result<Recall, KernelError> {
        self.run(|tx| tx.recall(s, q))
    }

    pub fn update(&self, s: &Session, id: CubeId, patch: &UpdatePatch) -> Result<Written, KernelError> {
        self.run(|tx| tx.update(s, id, patch))
    }

    pub fn archive(&self, s: &Session, id: CubeId) -> Result<Written, KernelError> {
        self.run(|tx| tx.archive(s, id))
    }

    pub fn activate(&self, s: &Session, id: CubeId) -> Result<Written, KernelError> {
        self.run(|tx| tx.activate(s, id))
    }

    pub fn rollback(&self, s: &Session, id: CubeId, to: u64) -> Result<Written, KernelError> {
        self.run(|tx| tx.rollback(s, id, to))
    }

    pub fn freeze(&self, s: &Session, id: CubeId, unfreeze: bool) -> Result<Written, KernelError> {
        self.run(|tx| tx.freeze(s, id, unfreeze))
    }

    pub fn merge(&self, s: &Session, id: CubeId, into: CubeId) -> Result<Written, KernelError> {
        self.run(|tx| tx.merge(s, id, into))
    }

    pub fn provenance(&self, s: &Session, id: CubeId) -> Result<Vec<LineageHop>, KernelError> {
        self.run(|tx| tx.provenance(s, id))
    }

    pub fn logquery(&self, s: &Session, filter: &LogFilter) -> Result<Vec<AuditRecord>, KernelError> {
        self.run(|tx| tx.logquery(s, filter))
    }

    pub fn transform(&self, s: &Session, id: CubeId) -> Result<TransformOutcome, KernelError> {
        self.run(|tx| tx.transform(s, id))
    }

    pub fn expire_sweep(&self, s: &Session) -> Result<Vec<CubeId>, KernelError> {
        self.run(|tx| tx.expire_sweep(s))
    }

    pub fn graph_link(&self, s: &Session, src: CubeId, rel: Relation, dst: CubeId) -> Result<bool, KernelError> {
        self.run(|tx| tx.graph_link(s, src, rel, dst))
    }

    pub fn load_archive(&self, s: &Session, bytes: &[u8], partition: Option<&str>) -> Result<LoadReport, KernelError> {
        self.run(|tx| tx.load_archive(s, bytes, partition))
    }

    /// Exports the heads of `ids` in the given order. Every cube needs
    /// Export; restricted cubes additionally need a signing key.
    pub fn dump(&self, s: &Session, ids: &[CubeId]) -> Result<Vec<u8>, KernelError> {
        let mut tx = Tx::new(self);
        let mut cubes = Vec::new();
        for id in ids {
            cubes.push(tx.checked(s, *id, Action::Export, AuditAction::Export, "dump")?.head());
        }
        let key = self.config.mip_key.as_deref();
        if key.is_none() {
            if let Some(c) = cubes.iter().find(|c| c.governance.sensitivity == Sensitivity::Restricted) {
                self.audit(s, AuditAction::Export, c.id, Outcome::Denied, "restricted cube needs a signing key")?;
                return Err(KernelError::KeyMissing("MIP signing"));
            }
        }
        Ok(mip::dump(&cubes, &s.principal, self.now(), key)?)
    }

    pub fn publish(&self, s: &Session, id: CubeId, topic: &str, visibility: Visibility) -> Result<StoreEntry, KernelError> {
        let mut tx = Tx::new(self);
        let row = tx.checked(s, id, Action::Export, AuditAction::Export, "publish")?;
        if row.governance.sensitivity == Sensitivity::Restricted {
            self.audit(s, AuditAction::Export, id, Outcome::Denied, "restricted cube cannot be published")?;
            return Err(KernelError::RestrictedUnpublishable(id));
        }
        self.store
            .append(topic, row.head(), s.principal.clone(), self.now(), visibility)
            .map_err(|e| KernelError::InvalidRequest(e.to_string()))
    }

    pub fn subscribe(&self, s: &Session, topic: &str, since: u64) -> Result<Vec<StoreEntry>, KernelError> {
        let out = self.store.subscribe(topic, since, &s.principal);
        self.audit(s, AuditAction::Read, CubeId::NIL, Outcome::Allowed, format!("subscribe {topic} delivered={}", out.len()))?;
        Ok(out)
    }

    /// Checks the watermark of the head of `id` against the configured key.
    pub fn watermark_verify(&self, s: &Session, id: CubeId) -> Result<bool, KernelError> {
        let mut tx = Tx::new(self);
        let row = tx.checked(s, id, Action::Read, AuditAction::Read, "watermark verify")?;
        let key = self.config.watermark_key.as_deref().ok_or(KernelError::KeyMissing("watermark"))?;
        Ok(memos_core::governance::watermark_verify(&row.head(), key).unwrap_or(false))
    }

    /// Heads of the cubes `s` may read, keyed by id.
    pub fn readable_heads(&self, s: &Session) -> Result<BTreeMap<CubeId, MemCube>, KernelError> {
        let mut out = BTreeMap::new();
        for id in self.backend().ids()? {
            if let Some(row) = self.backend().load(id)? {
                if decide_access(&s.principal, &row.governance, Action::Read).is_allowed() {
                    out.insert(id, row.head());
                }
            }
        }
        Ok(out)
    }
}
