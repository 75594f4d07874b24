use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::graph::MemGraph;
use super::tagexpr::{MalformedTagExpression, TagExpr};
use crate::ids::CubeId;
use crate::memcube::MemCube;
use crate::scheduler::{embed, semantic_rank, Embedding, QueryContext};

pub const MAX_PARTITION_DEPTH: usize = 8;

/// Slash-separated partition path such as `org/team/task`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartitionPath(String);

fn valid_segment(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 64
        && s.bytes().all(|b| matches!(b, b'a'..=b'z' | b'0'..=b'9' | b':' | b'_' | b'-' | b'.'))
}

impl PartitionPath {
    pub fn new(path: &str) -> Result<Self, OperatorError> {
        let segments: Vec<&str> = path.split('/').collect();
        if segments.len() > MAX_PARTITION_DEPTH || !segments.iter().all(|s| valid_segment(s)) {
            return Err(OperatorError::InvalidPartitionPath(path.to_string()));
        }
        Ok(PartitionPath(path.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Segment-aware prefix match; an empty or `/` scope matches everything.
    pub fn within(&self, scope: &str) -> bool {
        let scope = scope.trim_end_matches('/');
        scope.is_empty()
            || self.0 == scope
            || (self.0.starts_with(scope) && self.0.as_bytes().get(scope.len()) == Some(&b'/'))
    }
}

impl fmt::Display for PartitionPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for PartitionPath {
    type Err = OperatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PartitionPath::new(s)
    }
}

impl Serialize for PartitionPath {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for PartitionPath {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PartitionPath::new(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OperatorError {
    #[error("invalid partition path {0:?}")]
    InvalidPartitionPath(String),
    #[error(transparent)]
    MalformedTagExpression(#[from] MalformedTagExpression),
    #[error("k must be at least 1")]
    ZeroK,
}

/// Inverted label index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagIndex {
    postings: BTreeMap<String, BTreeSet<CubeId>>,
    labels_of: BTreeMap<CubeId, BTreeSet<String>>,
}

impl TagIndex {
    pub fn insert(&mut self, id: CubeId, labels: &BTreeSet<String>) {
        self.remove(id);
        for l in labels {
            self.postings.entry(l.clone()).or_default().insert(id);
        }
        self.labels_of.insert(id, labels.clone());
    }

    pub fn remove(&mut self, id: CubeId) {
        if let Some(old) = self.labels_of.remove(&id) {
            for l in old {
                if let Some(set) = self.postings.get_mut(&l) {
                    set.remove(&id);
                    if set.is_empty() {
                        self.postings.remove(&l);
                    }
                }
            }
        }
    }

    pub fn postings(&self, label: &str) -> BTreeSet<CubeId> {
        self.postings.get(label).cloned().unwrap_or_default()
    }

    pub fn labels_of(&self, id: CubeId) -> Option<&BTreeSet<String>> {
        self.labels_of.get(&id)
    }

    /// Evaluates `expr` with posting-list set algebra.
    pub fn eval(&self, expr: &TagExpr) -> BTreeSet<CubeId> {
        match expr {
            TagExpr::Term(t) => self.postings(t),
            TagExpr::And(a, b) => self.eval(a).intersection(&self.eval(b)).copied().collect(),
            TagExpr::Or(a, b) => self.eval(a).union(&self.eval(b)).copied().collect(),
        }
    }
}

/// Structural plus semantic index over the live (non-terminal) cubes.
#[derive(Debug, Clone, Default)]
pub struct OperatorIndex {
    tags: TagIndex,
    embeddings: BTreeMap<CubeId, Embedding>,
    partitions: BTreeMap<CubeId, PartitionPath>,
    graph: MemGraph,
}

impl OperatorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces everything indexed for `cube.id` with its current content.
    pub fn upsert(&mut self, cube: &MemCube, partition: PartitionPath) {
        self.tags.insert(cube.id, &cube.descriptive.labels);
        self.embeddings.insert(cube.id, embed(cube.payload.semantic_text()));
        self.partitions.insert(cube.id, partition);
        self.graph.add_node(cube.id);
    }

    /// Like [`OperatorIndex::upsert`] but validates a textual path.
    pub fn index_upsert(&mut self, cube: &MemCube, partition: &str) -> Result<(), OperatorError> {
        let path = PartitionPath::new(partition)?;
        self.upsert(cube, path);
        Ok(())
    }

    /// Drops a cube from the tag, embedding and partition structures. The
    /// graph keeps the node so lineage stays walkable.
    pub fn remove(&mut self, id: CubeId) {
        self.tags.remove(id);
        self.embeddings.remove(&id);
        self.partitions.remove(&id);
    }

    pub fn is_indexed(&self, id: CubeId) -> bool {
        self.partitions.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }

    pub fn tags(&self) -> &TagIndex {
        &self.tags
    }

    pub fn graph(&self) -> &MemGraph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut MemGraph {
        &mut self.graph
    }

    pub fn partition_of(&self, id: CubeId) -> Option<&PartitionPath> {
        self.partitions.get(&id)
    }

    pub fn embedding_of(&self, id: CubeId) -> Option<&Embedding> {
        self.embeddings.get(&id)
    }

    pub fn members_within(&self, scope: &str) -> BTreeSet<CubeId> {
        self.partitions
            .iter()
            .filter(|(_, p)| p.within(scope))
            .map(|(id, _)| *id)
            .collect()
    }

    /// Candidate set for a structural query.
    pub fn structural_filter(&self, scope: &str, structural: Option<&TagExpr>) -> BTreeSet<CubeId> {
        let members = self.members_within(scope);
        match structural {
            None => members,
            Some(e) => members.intersection(&self.tags.eval(e)).copied().collect(),
        }
    }

    /// Partition-prefix and tag-expression filter, then exhaustive cosine
    /// ranking against the query text.
    pub fn hybrid_search(
        &self,
        ctx: &QueryContext,
        scope: &str,
        structural: Option<&TagExpr>,
        k: usize,
    ) -> Result<Vec<(CubeId, f64)>, OperatorError> {
        if k == 0 {
            return Err(OperatorError::ZeroK);
        }
        let candidates: Vec<(CubeId, Embedding)> = self
            .structural_filter(scope, structural)
            .into_iter()
            .map(|id| (id, self.embeddings[&id].clone()))
            .collect();
        Ok(semantic_rank(&embed(&ctx.query_text), &candidates, k, -1.0))
    }

    /// Same as [`OperatorIndex::hybrid_search`] with a textual expression.
    pub fn hybrid_search_str(
        &self,
        ctx: &QueryContext,
        scope: &str,
        structural: Option<&str>,
        k: usize,
    ) -> Result<Vec<(CubeId, f64)>, OperatorError> {
        let expr = structural.map(TagExpr::parse).transpose()?;
        self.hybrid_search(ctx, scope, expr.as_ref(), k)
    }

    /// Index contents equal, ignoring the graph.
    pub fn same_contents(&self, other: &OperatorIndex) -> bool {
        self.tags == other.tags && self.embeddings == other.embeddings && self.partitions == other.partitions
    }

    pub fn rebuild<'a>(items: impl IntoIterator<Item = (&'a MemCube, PartitionPath)>) -> Self {
        let mut idx = OperatorIndex::new();
        for (c, p) in items {
            idx.upsert(c, p);
        }
        idx
    }
}
