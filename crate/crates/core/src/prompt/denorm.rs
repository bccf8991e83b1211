use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::graph::{EntityGraph, GraphError, NodeId};
use crate::store::{TableId, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenormConfig {
    /// Cap on children per (parent, joined table).
    pub n_nest: usize,
    /// Recursion depth; 0 keeps only the seed.
    pub zeta: usize,
    pub strict_time: bool,
}

impl Default for DenormConfig {
    fn default() -> Self {
        Self { n_nest: 4, zeta: 1, strict_time: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TreeNode {
    pub entity: NodeId,
    pub parent: Option<usize>,
    pub depth: usize,
    pub children: Vec<usize>,
}

/// A seed entity expanded into linked entities. Nodes are stored in
/// breadth-first order with the seed at index 0; one entity may occur under
/// several parents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DenormTree {
    pub nodes: Vec<TreeNode>,
    /// Tables in the order they were entered, starting with the seed's.
    pub visited: Vec<TableId>,
    pub t_star: Timestamp,
}

impl DenormTree {
    pub fn root(&self) -> NodeId {
        self.nodes[0].entity
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Distinct entities in first-occurrence order.
    pub fn entities(&self) -> Vec<NodeId> {
        let mut seen = BTreeSet::new();
        self.nodes.iter().map(|n| n.entity).filter(|v| seen.insert(*v)).collect()
    }
}

/// Expand `seed` breadth-first along key links.
///
/// At each level every frontier node joins each linked table not yet visited
/// and keeps up to `n_nest` admissible entities, most recent first (ties by
/// descending id). Tables joined during a level are marked visited once the
/// level is complete.
pub fn denormalize(
    g: &EntityGraph,
    seed: NodeId,
    t_star: Timestamp,
    cfg: &DenormConfig,
) -> Result<DenormTree, GraphError> {
    if !g.contains(seed) {
        return Err(GraphError::UnknownNode(seed));
    }
    let mut tree = DenormTree {
        nodes: vec![TreeNode { entity: seed, parent: None, depth: 0, children: Vec::new() }],
        visited: vec![seed.table()],
        t_star,
    };
    let mut visited: BTreeSet<TableId> = [seed.table()].into();
    let mut frontier = vec![0usize];
    for depth in 1..=cfg.zeta {
        let mut next = Vec::new();
        let mut entered = BTreeSet::new();
        for &p in &frontier {
            let u = tree.nodes[p].entity;
            let mut joined: Vec<(TableId, Vec<(Timestamp, NodeId)>)> = Vec::new();
            for &rel in g.relations_into(u.table()) {
                let src = g.relation(rel).src;
                if visited.contains(&src) {
                    continue;
                }
                let cands = g.valid_neighbors(u, rel, t_star, cfg.strict_time)?;
                let slot = match joined.iter().position(|(t, _)| *t == src) {
                    Some(i) => i,
                    None => {
                        joined.push((src, Vec::new()));
                        joined.len() - 1
                    }
                };
                joined[slot].1.extend(cands.iter().map(|&w| (g.time(w), w)));
            }
            joined.sort_by_key(|(t, _)| *t);
            for (table, mut cands) in joined {
                cands.sort_unstable_by(|a, b| b.cmp(a));
                cands.dedup();
                cands.truncate(cfg.n_nest);
                if !cands.is_empty() {
                    entered.insert(table);
                }
                for (_, w) in cands {
                    let idx = tree.nodes.len();
                    tree.nodes.push(TreeNode { entity: w, parent: Some(p), depth, children: Vec::new() });
                    tree.nodes[p].children.push(idx);
                    next.push(idx);
                }
            }
        }
        for t in entered {
            if visited.insert(t) {
                tree.visited.push(t);
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(tree)
}
