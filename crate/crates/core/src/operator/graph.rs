//! Typed relation graph between cubes. DerivedFrom edges form a DAG.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ids::CubeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    DerivedFrom,
    Supports,
    Contradicts,
    About,
}

impl Relation {
    pub const ALL: [Relation; 4] =
        [Relation::DerivedFrom, Relation::Supports, Relation::Contradicts, Relation::About];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Outgoing,
    Incoming,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: CubeId,
    pub relation: Relation,
    pub dst: CubeId,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("self loops are not allowed")]
    SelfLoop,
    #[error("link would close a DerivedFrom cycle")]
    CycleRejected,
    #[error("unknown cube {0}")]
    UnknownCube(CubeId),
    #[error("depth must be 1..=3, got {0}")]
    BadDepth(u8),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemGraph {
    nodes: BTreeSet<CubeId>,
    out: BTreeMap<CubeId, BTreeSet<(Relation, CubeId)>>,
    inc: BTreeMap<CubeId, BTreeSet<(Relation, CubeId)>>,
}

impl MemGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: CubeId) {
        self.nodes.insert(id);
    }

    pub fn contains(&self, id: CubeId) -> bool {
        self.nodes.contains(&id)
    }

    pub fn edge_count(&self) -> usize {
        self.out.values().map(BTreeSet::len).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.out
            .iter()
            .flat_map(|(src, set)| set.iter().map(move |(relation, dst)| Edge { src: *src, relation: *relation, dst: *dst }))
    }

    /// Would `src -DerivedFrom-> dst` close a cycle?
    fn reaches_derived(&self, from: CubeId, target: CubeId) -> bool {
        let mut seen = BTreeSet::new();
        let mut stack = alloc::vec![from];
        while let Some(n) = stack.pop() {
            if n == target {
                return true;
            }
            if !seen.insert(n) {
                continue;
            }
            if let Some(next) = self.out.get(&n) {
                stack.extend(next.iter().filter(|(r, _)| *r == Relation::DerivedFrom).map(|(_, d)| *d));
            }
        }
        false
    }

    /// Records `src -relation-> dst`. Returns false when the edge existed.
    pub fn link(&mut self, src: CubeId, relation: Relation, dst: CubeId) -> Result<bool, GraphError> {
        if src == dst {
            return Err(GraphError::SelfLoop);
        }
        for id in [src, dst] {
            if !self.nodes.contains(&id) {
                return Err(GraphError::UnknownCube(id));
            }
        }
        if relation == Relation::DerivedFrom && self.reaches_derived(dst, src) {
            return Err(GraphError::CycleRejected);
        }
        let added = self.out.entry(src).or_default().insert((relation, dst));
        self.inc.entry(dst).or_default().insert((relation, src));
        Ok(added)
    }

    fn step(&self, id: CubeId, filter: Option<Relation>, dir: Direction) -> Vec<CubeId> {
        let pick = |m: &BTreeMap<CubeId, BTreeSet<(Relation, CubeId)>>| -> Vec<CubeId> {
            m.get(&id)
                .into_iter()
                .flatten()
                .filter(|(r, _)| filter.is_none_or(|f| f == *r))
                .map(|(_, n)| *n)
                .collect()
        };
        match dir {
            Direction::Outgoing => pick(&self.out),
            Direction::Incoming => pick(&self.inc),
            Direction::Both => {
                let mut v = pick(&self.out);
                v.extend(pick(&self.inc));
                v
            }
        }
    }

    /// Nodes reachable within `depth` hops (the start node excluded).
    pub fn neighbors(
        &self,
        id: CubeId,
        filter: Option<Relation>,
        depth: u8,
        dir: Direction,
    ) -> Result<BTreeSet<CubeId>, GraphError> {
        if !(1..=3).contains(&depth) {
            return Err(GraphError::BadDepth(depth));
        }
        if !self.nodes.contains(&id) {
            return Err(GraphError::UnknownCube(id));
        }
        let mut dist: BTreeMap<CubeId, u8> = BTreeMap::new();
        dist.insert(id, 0);
        let mut queue = VecDeque::from([id]);
        while let Some(n) = queue.pop_front() {
            let d = dist[&n];
            if d == depth {
                continue;
            }
            for m in self.step(n, filter, dir) {
                if let alloc::collections::btree_map::Entry::Vacant(e) = dist.entry(m) {
                    e.insert(d + 1);
                    queue.push_back(m);
                }
            }
        }
        dist.remove(&id);
        Ok(dist.into_keys().collect())
    }

    /// Direct DerivedFrom targets of `id`.
    pub fn derived_from(&self, id: CubeId) -> Vec<CubeId> {
        self.step(id, Some(Relation::DerivedFrom), Direction::Outgoing)
    }
}
