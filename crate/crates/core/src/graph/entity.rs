use std::fmt;

use serde::Serialize;

use super::schema::{Relation, RelationId, SchemaGraph};
use super::GraphError;
use crate::store::{Database, KeyIndex, TableId, Timestamp};

/// A table row packed as `table << 32 | row`; ordering is by table, then row.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct NodeId(pub u64);

impl NodeId {
    pub fn new(table: TableId, row: usize) -> Self {
        debug_assert!(table.0 < (1 << 32) && row < (1 << 32));
        NodeId(((table.0 as u64) << 32) | row as u64)
    }

    pub fn table(self) -> TableId {
        TableId((self.0 >> 32) as usize)
    }

    pub fn row(self) -> usize {
        (self.0 & 0xffff_ffff) as usize
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.table().0, self.row())
    }
}

/// Compressed incoming adjacency of one relation, indexed by destination row.
#[derive(Debug, Clone, Default)]
struct Csr {
    offsets: Vec<usize>,
    /// Per destination, sources sorted by `(time, id)`.
    nbrs: Vec<NodeId>,
    times: Vec<Timestamp>,
}

#[derive(Debug, Clone)]
pub struct EntityGraph {
    pub schema: SchemaGraph,
    times: Vec<Vec<Timestamp>>,
    adj: Vec<Csr>,
    rels_into: Vec<Vec<RelationId>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GraphStats {
    /// `(table, node count)`.
    pub nodes: Vec<(String, usize)>,
    /// `(relation name, directed edge count)`.
    pub edges: Vec<(String, usize)>,
}

impl EntityGraph {
    pub fn build(db: &Database, index: &KeyIndex) -> Self {
        let schema = SchemaGraph::build(db);
        let times: Vec<Vec<Timestamp>> =
            db.tables.iter().map(|t| t.entities.iter().map(|e| e.time).collect()).collect();
        let mut lists: Vec<Vec<Vec<NodeId>>> =
            schema.relations.iter().map(|r| vec![Vec::new(); db.table(r.dst).len()]).collect();
        for (ti, t) in db.tables.iter().enumerate() {
            let src = TableId(ti);
            for (k, &(_, target)) in t.fk_cols.iter().enumerate() {
                let fwd = schema.relation_id(src, target, super::Direction::Forward).expect("link for foreign key");
                let inv = schema.relation_id(target, src, super::Direction::Inverse).expect("inverse link");
                for row in 0..t.len() {
                    if let Some((_, trow)) = index.resolve(db, src, row, k) {
                        lists[fwd.0][trow].push(NodeId::new(src, row));
                        lists[inv.0][row].push(NodeId::new(target, trow));
                    }
                }
            }
        }
        let time_of = |n: NodeId| times[n.table().0][n.row()];
        let adj = lists
            .into_iter()
            .map(|per_dst| {
                let mut csr = Csr { offsets: Vec::with_capacity(per_dst.len() + 1), ..Csr::default() };
                csr.offsets.push(0);
                for mut l in per_dst {
                    l.sort_unstable_by_key(|&n| (time_of(n), n));
                    csr.times.extend(l.iter().map(|&n| time_of(n)));
                    csr.nbrs.extend(l);
                    csr.offsets.push(csr.nbrs.len());
                }
                csr
            })
            .collect();
        let rels_into = (0..db.num_tables()).map(|t| schema.relations_into(TableId(t))).collect();
        Self { schema, times, adj, rels_into }
    }

    pub fn num_nodes(&self) -> usize {
        self.times.iter().map(Vec::len).sum()
    }

    pub fn num_tables(&self) -> usize {
        self.times.len()
    }

    pub fn table_len(&self, table: TableId) -> usize {
        self.times[table.0].len()
    }

    pub fn contains(&self, v: NodeId) -> bool {
        v.table().0 < self.times.len() && v.row() < self.times[v.table().0].len()
    }

    /// All nodes in id order.
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.times.iter().enumerate().flat_map(|(t, ts)| (0..ts.len()).map(move |r| NodeId::new(TableId(t), r)))
    }

    pub fn node_type(&self, v: NodeId) -> TableId {
        v.table()
    }

    pub fn time(&self, v: NodeId) -> Timestamp {
        self.times[v.table().0][v.row()]
    }

    pub fn relation(&self, rel: RelationId) -> Relation {
        self.schema.relation(rel)
    }

    pub fn num_relations(&self) -> usize {
        self.adj.len()
    }

    /// Relations carrying messages into nodes of `table`.
    pub fn relations_into(&self, table: TableId) -> &[RelationId] {
        &self.rels_into[table.0]
    }

    fn check(&self, v: NodeId, rel: RelationId) -> Result<(), GraphError> {
        if !self.contains(v) {
            return Err(GraphError::UnknownNode(v));
        }
        if rel.0 >= self.adj.len() || self.schema.relations[rel.0].dst != v.table() {
            return Err(GraphError::UnknownRelation { rel: rel.0, table: v.table().0 });
        }
        Ok(())
    }

    /// Sources `w` of edges `w -> v` under `rel`, sorted by `(time, id)`.
    pub fn neighbors(&self, v: NodeId, rel: RelationId) -> Result<(&[NodeId], &[Timestamp]), GraphError> {
        self.check(v, rel)?;
        let csr = &self.adj[rel.0];
        let (a, b) = (csr.offsets[v.row()], csr.offsets[v.row() + 1]);
        Ok((&csr.nbrs[a..b], &csr.times[a..b]))
    }

    /// The temporally valid prefix of [`neighbors`](Self::neighbors): sources with
    /// `time <= t_star`, or `time < t_star` when `strict`.
    pub fn valid_neighbors(
        &self,
        v: NodeId,
        rel: RelationId,
        t_star: Timestamp,
        strict: bool,
    ) -> Result<&[NodeId], GraphError> {
        let (nbrs, times) = self.neighbors(v, rel)?;
        let end = if strict { times.partition_point(|&t| t < t_star) } else { times.partition_point(|&t| t <= t_star) };
        Ok(&nbrs[..end])
    }

    /// Sources of edges into `v` under `rel` whose time is `<= t_star`
    /// (`< t_star` when `strict`), ascending by id. Parallel edges repeat.
    pub fn temporal_neighbors(
        &self,
        v: NodeId,
        rel: RelationId,
        t_star: Timestamp,
        strict: bool,
    ) -> Result<Vec<NodeId>, GraphError> {
        let mut out = self.valid_neighbors(v, rel, t_star, strict)?.to_vec();
        out.sort_unstable();
        Ok(out)
    }

    pub fn edge_count(&self, rel: RelationId) -> usize {
        self.adj[rel.0].nbrs.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(|c| c.nbrs.len()).sum()
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            nodes: self.schema.tables.iter().cloned().zip(self.times.iter().map(Vec::len)).collect(),
            edges: (0..self.adj.len()).map(|r| (self.schema.relation_name(RelationId(r)), self.edge_count(RelationId(r)))).collect(),
        }
    }
}
