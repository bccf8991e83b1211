//! Schema graph and heterogeneous relational entity graph.
//!
//! Every resolvable foreign-key cell `(row w in A) -> (row v in B)` yields two
//! directed typed edges: `w -> v` under the forward relation `(A, B)` and
//! `v -> w` under the inverse relation `(B, A)`. Two foreign-key columns of
//! `A` into `B` share one relation, so parallel edges are possible and the
//! edge set is a multiset.

mod entity;
mod schema;

pub use entity::{EntityGraph, GraphStats, NodeId};
pub use schema::{Direction, Relation, RelationId, SchemaGraph};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("unknown node {0:?}")]
    UnknownNode(NodeId),
    #[error("relation {rel} does not point into table {table}")]
    UnknownRelation { rel: usize, table: usize },
}
