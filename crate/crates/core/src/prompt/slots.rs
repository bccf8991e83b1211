use serde::Serialize;

use super::denorm::DenormTree;
use super::PromptError;
use crate::autodiff::{Graph, Var};
use crate::graph::NodeId;
use crate::store::Database;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "node", rename_all = "lowercase")]
pub enum Slot {
    Pooled,
    Open,
    Close,
    /// Index into [`DenormTree::nodes`].
    Node(usize),
}

/// Flat layout of a denormalized tree: `[pooled] OPEN v children CLOSE`,
/// emitted depth-first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GraphPrompt {
    pub slots: Vec<Slot>,
    pub tree: DenormTree,
}

impl GraphPrompt {
    pub fn build(tree: &DenormTree, include_pooled: bool) -> Self {
        let mut slots = Vec::with_capacity(3 * tree.len() + 1);
        if include_pooled {
            slots.push(Slot::Pooled);
        }
        fn emit(tree: &DenormTree, i: usize, slots: &mut Vec<Slot>) {
            slots.push(Slot::Open);
            slots.push(Slot::Node(i));
            for &c in &tree.nodes[i].children {
                emit(tree, c, slots);
            }
            slots.push(Slot::Close);
        }
        if !tree.is_empty() {
            emit(tree, 0, &mut slots);
        }
        Self { slots, tree: tree.clone() }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Count of vector slots (node vectors plus the pooled slot).
    pub fn vector_slots(&self) -> usize {
        self.slots.iter().filter(|s| matches!(s, Slot::Pooled | Slot::Node(_))).count()
    }

    /// The delimiter skeleton as a bracket string, e.g. `{{}{}}`.
    pub fn brackets(&self) -> String {
        self.slots
            .iter()
            .filter_map(|s| match s {
                Slot::Open => Some('{'),
                Slot::Close => Some('}'),
                _ => None,
            })
            .collect()
    }

    /// Stack the slot vectors into a `len × d_l` matrix.
    ///
    /// `projected` holds one row per subgraph node, addressed through
    /// `local_of`; `delimiters` is `2 × d_l` with OPEN in row 0 and CLOSE in
    /// row 1.
    pub fn assemble(
        &self,
        g: &mut Graph<'_>,
        projected: Var,
        local_of: impl Fn(NodeId) -> Option<usize>,
        pooled: Option<Var>,
        delimiters: Var,
    ) -> Result<Var, PromptError> {
        let n = g.shape(projected)[0];
        let mut parts = vec![projected, delimiters];
        let pooled_row = match pooled {
            Some(p) => {
                parts.push(p);
                Some(n + 2)
            }
            None => None,
        };
        let mut idx = Vec::with_capacity(self.slots.len());
        for s in &self.slots {
            idx.push(match *s {
                Slot::Open => n,
                Slot::Close => n + 1,
                Slot::Pooled => pooled_row.ok_or(PromptError::MissingPooled)?,
                Slot::Node(i) => {
                    let v = self.tree.nodes[i].entity;
                    local_of(v).filter(|&l| l < n).ok_or(PromptError::MissingEmbedding(v))?
                }
            });
        }
        let all = g.concat_rows(&parts)?;
        Ok(g.gather_rows(all, &idx)?)
    }

    /// One line per slot: kind, source entity and nesting depth.
    pub fn listing(&self, db: &Database) -> Vec<String> {
        let mut depth = 0usize;
        let mut out = Vec::with_capacity(self.slots.len());
        for (i, s) in self.slots.iter().enumerate() {
            let line = match *s {
                Slot::Pooled => format!("{i:>4}  pooled  -  depth=-"),
                Slot::Open => {
                    depth += 1;
                    format!("{i:>4}  open    -  depth={}", depth - 1)
                }
                Slot::Close => {
                    depth -= 1;
                    format!("{i:>4}  close   -  depth={depth}")
                }
                Slot::Node(n) => {
                    let node = &self.tree.nodes[n];
                    let v = node.entity;
                    let t = db.table(v.table());
                    format!("{i:>4}  node    {}:{}  depth={}", t.name(), t.entities[v.row()].pkey, node.depth)
                }
            };
            out.push(line);
        }
        out
    }
}
