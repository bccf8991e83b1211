use std::fmt::Write as _;

use serde::Serialize;

use crate::store::{Database, TableId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Direction {
    /// Foreign-key holder to referenced table.
    Forward,
    /// Referenced table to foreign-key holder.
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RelationId(pub usize);

/// A typed edge set `src -> dst` between tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Relation {
    pub src: TableId,
    pub dst: TableId,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaGraph {
    pub tables: Vec<String>,
    /// Forward and inverse relation of each link, adjacent, in link order.
    pub relations: Vec<Relation>,
}

impl SchemaGraph {
    pub fn build(db: &Database) -> Self {
        let mut relations = Vec::with_capacity(2 * db.links.len());
        for &(fk_table, pk_table) in &db.links {
            relations.push(Relation { src: fk_table, dst: pk_table, direction: Direction::Forward });
            relations.push(Relation { src: pk_table, dst: fk_table, direction: Direction::Inverse });
        }
        Self { tables: db.tables.iter().map(|t| t.name().to_string()).collect(), relations }
    }

    pub fn relation(&self, id: RelationId) -> Relation {
        self.relations[id.0]
    }

    pub fn relation_id(&self, src: TableId, dst: TableId, direction: Direction) -> Option<RelationId> {
        self.relations
            .iter()
            .position(|r| r.src == src && r.dst == dst && r.direction == direction)
            .map(RelationId)
    }

    /// Relations whose destination is `table`, in relation order.
    pub fn relations_into(&self, table: TableId) -> Vec<RelationId> {
        (0..self.relations.len()).filter(|&i| self.relations[i].dst == table).map(RelationId).collect()
    }

    pub fn relation_name(&self, id: RelationId) -> String {
        let r = self.relation(id);
        let tag = match r.direction {
            Direction::Forward => "fwd",
            Direction::Inverse => "inv",
        };
        format!("{}->{}:{tag}", self.tables[r.src.0], self.tables[r.dst.0])
    }

    /// Whether every table is reachable from every other, ignoring direction.
    pub fn is_connected(&self) -> bool {
        if self.tables.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.tables.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(t) = stack.pop() {
            for r in &self.relations {
                if r.src.0 == t && !seen[r.dst.0] {
                    seen[r.dst.0] = true;
                    stack.push(r.dst.0);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    /// Graphviz rendering; forward links solid, inverse links dashed.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph schema {\n");
        for t in &self.tables {
            let _ = writeln!(s, "  \"{t}\";");
        }
        for r in &self.relations {
            let style = match r.direction {
                Direction::Forward => "solid",
                Direction::Inverse => "dashed",
            };
            let _ = writeln!(s, "  \"{}\" -> \"{}\" [style={style}];", self.tables[r.src.0], self.tables[r.dst.0]);
        }
        s.push_str("}\n");
        s
    }
}
