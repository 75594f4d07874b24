use std::collections::BTreeMap;

use memos_core::operator::{OperatorIndex, Relation};
use memos_core::scheduler::{HotCache, TransformKind};
use memos_core::CubeId;

use super::{Kernel, KernelError};
use crate::backend::CubeRow;
use crate::vault::Expect;

/// Staged writes of one transaction.
pub struct Tx<'k> {
    pub(crate) kernel: &'k Kernel,
    /// What each touched row looked like when first read.
    base: BTreeMap<CubeId, Expect>,
    staged: BTreeMap<CubeId, CubeRow>,
    /// Private index copy, made the first time a query runs after a write.
    index: Option<OperatorIndex>,
    links: Vec<(CubeId, Relation, CubeId)>,
    cache: Option<HotCache>,
    touches: Vec<CubeId>,
    transforms: Vec<TransformKind>,
    expired: u64,
}

impl<'k> Tx<'k> {
    pub(crate) fn new(kernel: &'k Kernel) -> Self {
        Tx {
            kernel,
            base: BTreeMap::new(),
            staged: BTreeMap::new(),
            index: None,
            links: Vec::new(),
            cache: None,
            touches: Vec::new(),
            transforms: Vec::new(),
            expired: 0,
        }
    }

    /// The row as this transaction sees it.
    pub fn load(&mut self, id: CubeId) -> Result<Option<CubeRow>, KernelError> {
        if let Some(r) = self.staged.get(&id) {
            return Ok(Some(r.clone()));
        }
        let row = self.kernel.backend().load(id)?;
        self.base.entry(id).or_insert_with(|| Expect::of(row.as_ref()));
        Ok(row)
    }

    pub fn row(&mut self, id: CubeId) -> Result<CubeRow, KernelError> {
        self.load(id)?.ok_or(KernelError::UnknownCube(id))
    }

    /// Stages `row` as the new content of its cube.
    pub fn stage(&mut self, mut row: CubeRow) {
        let id = row.id();
        let base = *self.base.entry(id).or_insert(Expect::Absent);
        row.rev = match base {
            Expect::Absent => 1,
            Expect::At { rev, .. } => rev + 1,
        };
        if let Some(ix) = self.index.as_mut() {
            apply_row(ix, &row);
        }
        self.staged.insert(id, row);
    }

    /// Runs `f` against the index as seen from inside this transaction.
    pub fn with_index<R>(&mut self, f: impl FnOnce(&OperatorIndex) -> R) -> R {
        if self.index.is_none() && self.staged.is_empty() && self.links.is_empty() {
            return f(&self.kernel.index.read().unwrap());
        }
        f(self.private_index())
    }

    fn private_index(&mut self) -> &mut OperatorIndex {
        if self.index.is_none() {
            let mut ix = self.kernel.index.read().unwrap().clone();
            for row in self.staged.values() {
                apply_row(&mut ix, row);
            }
            for (a, r, b) in &self.links {
                let _ = ix.graph_mut().link(*a, *r, *b);
            }
            self.index = Some(ix);
        }
        self.index.as_mut().expect("just set")
    }

    /// Adds a graph edge, rejecting cycles against the staged graph.
    pub fn link(&mut self, src: CubeId, rel: Relation, dst: CubeId) -> Result<bool, KernelError> {
        let added = self.private_index().graph_mut().link(src, rel, dst)?;
        if added {
            self.links.push((src, rel, dst));
        }
        Ok(added)
    }

    pub(crate) fn cache(&mut self) -> &mut HotCache {
        if self.cache.is_none() {
            self.cache = Some(self.kernel.cache.lock().unwrap().clone());
        }
        self.cache.as_mut().expect("just set")
    }

    pub(crate) fn touched(&mut self, id: CubeId) {
        self.touches.push(id);
    }

    pub(crate) fn transformed(&mut self, kind: TransformKind) {
        self.transforms.push(kind);
    }

    pub(crate) fn expired(&mut self) {
        self.expired += 1;
    }

    /// Checks every base expectation and writes all staged rows at once,
    /// then brings the live index, graph, cache and counters up to date.
    pub fn commit(self) -> Result<(), KernelError> {
        let k = self.kernel;
        let Tx { base, staged, links, touches, transforms, expired, .. } = self;
        let batch: Vec<(CubeRow, Expect)> = staged.into_values().map(|r| {
            let e = base[&r.id()];
            (r, e)
        }).collect();
        k.vault.commit_with(&batch, || {
            {
                let mut ix = k.index.write().unwrap();
                for (row, _) in &batch {
                    apply_row(&mut ix, row);
                }
                for (a, r, b) in &links {
                    let _ = ix.graph_mut().link(*a, *r, *b);
                }
            }
            let mut stats = k.stats.lock().unwrap();
            if !touches.is_empty() {
                let mut cache = k.cache.lock().unwrap();
                let mut trace = k.cache_trace.lock().unwrap();
                for id in &touches {
                    if cache.contains(*id) {
                        stats.cache_hits += 1;
                    } else {
                        stats.cache_misses += 1;
                    }
                    cache.touch_next(*id);
                    if k.config.trace_cache {
                        trace.push(*id);
                    }
                }
            }
            for t in &transforms {
                *stats.transforms.entry(format!("{t:?}")).or_default() += 1;
            }
            stats.expired += expired;
            if !batch.is_empty() {
                stats.commits += 1;
            }
        })?;
        Ok(())
    }
}

/// Terminal cubes leave the search structures; the graph keeps them.
fn apply_row(ix: &mut OperatorIndex, row: &CubeRow) {
    if row.state().is_terminal() {
        ix.remove(row.id());
        ix.graph_mut().add_node(row.id());
    } else {
        ix.upsert(&row.head(), row.partition.clone());
    }
}
