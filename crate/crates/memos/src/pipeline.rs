//! DAG executor for memory-op pipelines.
//!
//! Nodes run level by level in dependency order; nodes of one level may run
//! on separate threads. A transactional pipeline stages every write in one
//! [`Tx`] and commits only when all nodes succeed, so a failed node leaves
//! the vault exactly as it was (apart from audit records, including one for
//! the abort itself).

use std::collections::BTreeMap;
use std::sync::Mutex;

use memos_core::governance::{AuditAction, AuditRecord, Outcome};
use memos_core::reader::{parse_request, MemoryOp, NodeId, PipelineGraph, Target};
use memos_core::{CubeId, MemCube};
use serde::{Deserialize, Serialize};

use crate::kernel::{Kernel, KernelError, LineageHop, NewCube, RecallQuery, Session, Tx, UpdatePatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "items")]
pub enum NodeOutput {
    Cubes(Vec<MemCube>),
    Lineage(Vec<LineageHop>),
    Records(Vec<AuditRecord>),
}

#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    /// Fail this node instead of running it.
    pub fault: Option<NodeId>,
    /// Run nodes one at a time in exactly this order.
    pub force_order: Option<Vec<NodeId>>,
    /// Run each level's nodes on their own threads.
    pub parallel: bool,
    /// Commit every node on its own, ignoring the graph's flag.
    pub non_transactional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub outputs: BTreeMap<NodeId, NodeOutput>,
    /// Node start order.
    pub order: Vec<NodeId>,
    pub transactional: bool,
}

/// Where nodes stage their writes.
#[allow(clippy::large_enum_variant)] // one per pipeline run
enum Sink<'k> {
    Shared(Mutex<Tx<'k>>),
    PerNode,
}

fn bound_target(
    graph: &PipelineGraph,
    node: NodeId,
    outputs: &BTreeMap<NodeId, NodeOutput>,
) -> Result<Option<CubeId>, KernelError> {
    let Some(edge) = graph.binding_into(node) else { return Ok(None) };
    let index = edge.binding.expect("binding edge").index;
    match outputs.get(&edge.from) {
        Some(NodeOutput::Cubes(cs)) => cs
            .get(index)
            .map(|c| Some(c.id))
            .ok_or_else(|| KernelError::InvalidRequest(format!("binding @{index} but node {} produced {}", edge.from, cs.len()))),
        _ => Err(KernelError::InvalidRequest(format!("node {} produced no cubes", edge.from))),
    }
}

fn heads(tx: &mut Tx<'_>, ids: impl IntoIterator<Item = CubeId>) -> Result<Vec<MemCube>, KernelError> {
    ids.into_iter().map(|id| Ok(tx.row(id)?.head())).collect()
}

/// Runs one op inside `tx`.
pub(crate) fn run_op(
    tx: &mut Tx<'_>,
    s: &Session,
    op: &MemoryOp,
    bound: Option<CubeId>,
) -> Result<NodeOutput, KernelError> {
    let target = |t: Target| match t {
        Target::Id(id) => Ok(id),
        Target::Bound => bound.ok_or_else(|| KernelError::InvalidRequest("unbound target".into())),
    };
    Ok(match op {
        MemoryOp::Query { text, labels, k, expr } => {
            let q = RecallQuery {
                text: text.clone(),
                labels: labels.clone(),
                k: Some(*k),
                structural: expr.as_ref().map(|e| e.to_string()),
                ..RecallQuery::default()
            };
            let r = tx.recall(s, &q)?;
            NodeOutput::Cubes(heads(tx, r.hits.iter().map(|h| h.cube_id))?)
        }
        MemoryOp::Create { payload, semantic_type, labels } => {
            let mut new = NewCube::text("");
            new.payload = payload.clone();
            new.semantic_type = *semantic_type;
            new.labels = labels.clone();
            let w = tx.create(s, &new)?;
            NodeOutput::Cubes(heads(tx, [w.id])?)
        }
        MemoryOp::Update { target: t, patch } => {
            let w = tx.update(s, target(*t)?, &UpdatePatch::from(patch.clone()))?;
            NodeOutput::Cubes(heads(tx, [w.id])?)
        }
        MemoryOp::Archive { target: t } => {
            let w = tx.archive(s, target(*t)?)?;
            NodeOutput::Cubes(heads(tx, [w.id])?)
        }
        MemoryOp::Transform { target: t } => {
            let o = tx.transform(s, target(*t)?)?;
            NodeOutput::Cubes(heads(tx, [o.created.unwrap_or(o.source)])?)
        }
        MemoryOp::Provenance { target: t } => NodeOutput::Lineage(tx.provenance(s, target(*t)?)?),
        MemoryOp::LogQuery { filter } => NodeOutput::Records(tx.logquery(s, filter)?),
    })
}

struct Shared<'k, 'g> {
    kernel: &'k Kernel,
    session: &'g Session,
    graph: &'g PipelineGraph,
    fault: Option<NodeId>,
    sink: Sink<'k>,
    outputs: Mutex<BTreeMap<NodeId, NodeOutput>>,
    order: Mutex<Vec<NodeId>>,
}

impl Shared<'_, '_> {
    fn run_node(&self, node: NodeId) -> Result<(), KernelError> {
        let fail = |cause: KernelError| KernelError::NodeFailed { node, cause: Box::new(cause) };
        let op = &self.graph.nodes[&node];
        let exec = |tx: &mut Tx<'_>| -> Result<NodeOutput, KernelError> {
            let bound = bound_target(self.graph, node, &self.outputs.lock().unwrap())?;
            if self.fault == Some(node) {
                return Err(KernelError::InjectedFault);
            }
            run_op(tx, self.session, op, bound)
        };
        let out = match &self.sink {
            Sink::Shared(tx) => {
                // hold the transaction while recording the start so the
                // recorded order is the order writes were staged in
                let mut tx = tx.lock().unwrap();
                self.order.lock().unwrap().push(node);
                exec(&mut tx).map_err(fail)?
            }
            Sink::PerNode => {
                self.order.lock().unwrap().push(node);
                self.kernel.run(|tx| exec(tx)).map_err(fail)?
            }
        };
        self.outputs.lock().unwrap().insert(node, out);
        Ok(())
    }
}

impl Kernel {
    /// Validates and runs `graph` on behalf of `s`.
    pub fn execute_pipeline(
        &self,
        s: &Session,
        graph: &PipelineGraph,
        opts: &ExecOptions,
    ) -> Result<PipelineRun, KernelError> {
        let levels = match graph.validate() {
            Ok(l) => l,
            Err(e) => {
                self.audit(s, AuditAction::Govern, CubeId::NIL, Outcome::Denied, format!("pipeline rejected: {e}"))?;
                return Err(e.into());
            }
        };
        if let Some(order) = &opts.force_order {
            if !graph.is_topological(order) {
                return Err(KernelError::InvalidRequest("forced order is not topological".into()));
            }
        }
        let transactional = graph.transactional && !opts.non_transactional;
        let mut attempt = 0;
        loop {
            let shared = Shared {
                kernel: self,
                session: s,
                graph,
                fault: opts.fault,
                sink: if transactional { Sink::Shared(Mutex::new(Tx::new(self))) } else { Sink::PerNode },
                outputs: Mutex::new(BTreeMap::new()),
                order: Mutex::new(Vec::new()),
            };
            let result = run_levels(&shared, &levels, opts);
            let Shared { sink, outputs, order, .. } = shared;
            let order = order.into_inner().unwrap();
            if let Err(e) = result {
                if transactional {
                    self.audit(
                        s,
                        AuditAction::Govern,
                        CubeId::NIL,
                        Outcome::Denied,
                        format!("pipeline aborted, staged writes discarded: {e}"),
                    )?;
                }
                return Err(e);
            }
            if let Sink::Shared(tx) = sink {
                match tx.into_inner().unwrap().commit() {
                    Ok(()) => {}
                    Err(KernelError::VersionConflict(_)) if attempt < self.config().conflict_retries => {
                        attempt += 1;
                        continue;
                    }
                    Err(e) => {
                        self.audit(s, AuditAction::Govern, CubeId::NIL, Outcome::Denied, format!("pipeline commit failed: {e}"))?;
                        return Err(e);
                    }
                }
            }
            return Ok(PipelineRun { outputs: outputs.into_inner().unwrap(), order, transactional });
        }
    }

    /// Parses a request in the command grammar and runs it.
    pub fn request(&self, s: &Session, text: &str) -> Result<PipelineRun, KernelError> {
        let parsed = match parse_request(text) {
            Ok(p) => p,
            Err(e) => {
                self.audit(s, AuditAction::Govern, CubeId::NIL, Outcome::Denied, format!("request rejected: {e}"))?;
                return Err(e.into());
            }
        };
        self.execute_pipeline(s, &parsed.graph, &ExecOptions::default())
    }
}

fn run_levels(shared: &Shared<'_, '_>, levels: &[Vec<NodeId>], opts: &ExecOptions) -> Result<(), KernelError> {
    if let Some(order) = &opts.force_order {
        return order.iter().try_for_each(|n| shared.run_node(*n));
    }
    for level in levels {
        if opts.parallel && level.len() > 1 {
            let errors: Vec<(usize, KernelError)> = std::thread::scope(|scope| {
                let handles: Vec<_> = level.iter().map(|n| scope.spawn(move || shared.run_node(*n))).collect();
                handles
                    .into_iter()
                    .zip(level)
                    .filter_map(|(h, n)| {
                        let r = h.join().expect("pipeline node panicked");
                        r.err().map(|e| {
                            let pos = shared.order.lock().unwrap().iter().position(|x| x == n).unwrap_or(usize::MAX);
                            (pos, e)
                        })
                    })
                    .collect()
            });
            if let Some((_, e)) = errors.into_iter().min_by_key(|(p, _)| *p) {
                return Err(e);
            }
        } else {
            for n in level {
                shared.run_node(*n)?;
            }
        }
    }
    Ok(())
}
