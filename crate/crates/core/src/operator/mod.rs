//! Memory organization: tags, relation graph, partitions and hybrid
//! structural/semantic search.

pub mod graph;
pub mod index;
pub mod tagexpr;

pub use graph::{Direction, Edge, GraphError, MemGraph, Relation};
pub use index::{OperatorError, OperatorIndex, PartitionPath, TagIndex, MAX_PARTITION_DEPTH};
pub use tagexpr::{MalformedTagExpression, TagExpr};
