//! Seed-anchored, temporally filtered neighborhood sampling.

use fnv::FnvHashMap;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{EntityGraph, GraphError, NodeId, RelationId};
use crate::store::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Uniform,
    Last,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(Strategy::Uniform),
            "last" => Ok(Strategy::Last),
            _ => Err(format!("unknown strategy `{s}` (expected uniform or last)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Neighbor cap per (frontier node, relation) at each hop.
    pub fanouts: Vec<usize>,
    pub strategy: Strategy,
    /// Admit only neighbors strictly earlier than the seed time.
    pub strict_time: bool,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { fanouts: vec![16, 16], strategy: Strategy::Uniform, strict_time: false, rng_seed: 0 }
    }
}

impl SamplerConfig {
    pub fn admits(&self, t: Timestamp, t_star: Timestamp) -> bool {
        if self.strict_time {
            t < t_star
        } else {
            t <= t_star
        }
    }
}

/// One typed directed edge `src -> dst` between local node ordinals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct LocalEdge {
    pub rel: RelationId,
    pub dst: usize,
    pub src: usize,
}

/// Neighbors picked for one (hop, frontier node, relation).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Selection {
    pub hop: usize,
    pub from: NodeId,
    pub rel: RelationId,
    pub picked: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SampledSubgraph {
    pub seed: NodeId,
    pub seed_time: Timestamp,
    /// Local ordinal -> node; the seed is ordinal 0.
    pub nodes: Vec<NodeId>,
    /// Hop at which each node was first reached.
    pub hops: Vec<usize>,
    /// Induced edges (parallel edges repeat), sorted by `(rel, dst)`; within
    /// one group sources ascend by global id.
    pub edges: Vec<LocalEdge>,
    pub selections: Vec<Selection>,
    #[serde(skip)]
    local: FnvHashMap<NodeId, usize>,
}

/// RNG for one (frontier node, relation) draw; independent of visiting order.
fn draw_rng(cfg: &SamplerConfig, seed: NodeId, hop: usize, from: NodeId, rel: RelationId) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&cfg.rng_seed.to_le_bytes());
    key[8..16].copy_from_slice(&seed.0.to_le_bytes());
    key[16..24].copy_from_slice(&from.0.to_le_bytes());
    key[24..28].copy_from_slice(&(hop as u32).to_le_bytes());
    key[28..32].copy_from_slice(&(rel.0 as u32).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

pub fn sample_subgraph(
    g: &EntityGraph,
    seed: NodeId,
    t_star: Timestamp,
    cfg: &SamplerConfig,
) -> Result<SampledSubgraph, GraphError> {
    if !g.contains(seed) {
        return Err(GraphError::UnknownNode(seed));
    }
    let mut sub = SampledSubgraph {
        seed,
        seed_time: t_star,
        nodes: vec![seed],
        hops: vec![0],
        edges: Vec::new(),
        selections: Vec::new(),
        local: FnvHashMap::default(),
    };
    sub.local.insert(seed, 0);
    let mut frontier = vec![seed];
    for (hop, &fanout) in cfg.fanouts.iter().enumerate() {
        let mut next = Vec::new();
        for &u in &frontier {
            for &rel in g.relations_into(u.table()) {
                let cands = g.valid_neighbors(u, rel, t_star, cfg.strict_time)?;
                let picked: Vec<NodeId> = if cands.len() <= fanout {
                    cands.to_vec()
                } else {
                    match cfg.strategy {
                        Strategy::Last => cands[cands.len() - fanout..].to_vec(),
                        Strategy::Uniform => {
                            let mut rng = draw_rng(cfg, seed, hop, u, rel);
                            let mut idx = sample(&mut rng, cands.len(), fanout).into_vec();
                            idx.sort_unstable();
                            idx.into_iter().map(|i| cands[i]).collect()
                        }
                    }
                };
                for &w in &picked {
                    if !sub.local.contains_key(&w) {
                        sub.local.insert(w, sub.nodes.len());
                        sub.nodes.push(w);
                        sub.hops.push(hop + 1);
                        next.push(w);
                    }
                }
                if !picked.is_empty() {
                    sub.selections.push(Selection { hop, from: u, rel, picked });
                }
            }
        }
        frontier = next;
    }
    sub.rebuild_edges(g);
    Ok(sub)
}

impl SampledSubgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn local_of(&self, v: NodeId) -> Option<usize> {
        self.local.get(&v).copied()
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.local.contains_key(&v)
    }

    /// Add nodes (e.g. prompt-tree entities) at the given hop label and
    /// recompute induced edges. Nodes already present keep their hop.
    pub fn extend_with(&mut self, g: &EntityGraph, extra: &[(NodeId, usize)]) {
        let mut changed = false;
        for &(v, hop) in extra {
            if !self.local.contains_key(&v) {
                self.local.insert(v, self.nodes.len());
                self.nodes.push(v);
                self.hops.push(hop);
                changed = true;
            }
        }
        if changed {
            self.rebuild_edges(g);
        }
    }

    fn rebuild_edges(&mut self, g: &EntityGraph) {
        let mut edges = Vec::new();
        for (dst, &v) in self.nodes.iter().enumerate() {
            for &rel in g.relations_into(v.table()) {
                let mut srcs: Vec<NodeId> = g
                    .neighbors(v, rel)
                    .expect("relation into node table")
                    .0
                    .iter()
                    .copied()
                    .filter(|w| self.local.contains_key(w))
                    .collect();
                srcs.sort_unstable();
                edges.extend(srcs.into_iter().map(|w| LocalEdge { rel, dst, src: self.local[&w] }));
            }
        }
        edges.sort_by_key(|e| (e.rel, e.dst));
        self.edges = edges;
    }

    /// Node and edge counts, max hop and per-relation edge counts.
    pub fn summary(&self, g: &EntityGraph) -> String {
        let mut per_rel: Vec<usize> = vec![0; g.num_relations()];
        for e in &self.edges {
            per_rel[e.rel.0] += 1;
        }
        let mut s = format!(
            "seed={:?} t*={} nodes={} edges={} max_hop={}",
            self.seed,
            self.seed_time,
            self.nodes.len(),
            self.edges.len(),
            self.hops.iter().max().copied().unwrap_or(0)
        );
        for (r, n) in per_rel.iter().enumerate() {
            if *n > 0 {
                s.push_str(&format!("\n  {} {n}", g.schema.relation_name(RelationId(r))));
            }
        }
        s
    }
}
