//! Column encoders, heterogeneous message passing, pooling and projection.
//!
//! Per table `T` with attribute columns `c_1..c_m` the initial embedding is
//! the concatenation of one `d_col`-wide block per column plus one block for
//! the entity's age relative to the seed time, so `d_φ(T) = (m + 1)·d_col`.
//!
//! Each GNN layer computes, for a node `v` of type `T`,
//!
//! ```text
//! m_v  = Σ_R Σ_{w ∈ N_R(v)} h_w · G_R            (sources summed by ascending id)
//! h'_v = dropout(relu([h_v ; m_v] · W_T + b_T))
//! ```
//!
//! and the pooled graph embedding is the mean of the final node states.

mod stats;

pub use stats::{text_bucket, text_tokens, ColumnStat, EncoderStats, TableStats, MISSING_ROW, UNK_ROW};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, ParamStore, Tensor, Var};
use crate::graph::{NodeId, Relation, SchemaGraph};
use crate::sampler::SampledSubgraph;
use crate::store::{Database, TableId, Timestamp};

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("encoder statistics do not cover table `{0}`")]
    UnfittedEncoder(String),
    #[error("empty subgraph")]
    EmptySubgraph,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T, E = EncoderError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    /// Graph-encoder width `d_g`.
    pub d_g: usize,
    /// Width of each column block.
    pub d_col: usize,
    /// Projection output width `d_l`; equals the decoder width.
    pub d_l: usize,
    pub dropout: f64,
    pub text_buckets: usize,
    pub max_categories: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { layers: 2, d_g: 128, d_col: 8, d_l: 64, dropout: 0.1, text_buckets: 1024, max_categories: 4096 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.layers == 0 || self.d_g == 0 || self.d_l == 0 || self.d_col == 0 {
            return Err("layers, d_g, d_l and d_col must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Per-node attribute ordinals (into the table's attribute columns) whose
/// encoder input is replaced by the lifted mask embedding; indexed by local
/// ordinal. Empty lists mean unmasked.
pub type CellMask = [Vec<usize>];

/// Final node states in local-ordinal order plus their mean.
#[derive(Debug, Clone, Copy)]
pub struct GraphEncoding {
    pub nodes: Var,
    pub pooled: Var,
}

/// Initial embeddings of the subgraph nodes of one table.
#[derive(Debug, Clone)]
pub struct TableBlock {
    pub table: TableId,
    /// Local ordinals, ascending.
    pub locals: Vec<usize>,
    pub h: Var,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub stats: EncoderStats,
    relations: Vec<Relation>,
    tables: Vec<String>,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig, stats: EncoderStats, schema: &SchemaGraph) -> Result<Self> {
        for (i, t) in schema.tables.iter().enumerate() {
            if stats.tables.get(i).map(|s| &s.table) != Some(t) {
                return Err(EncoderError::UnfittedEncoder(t.clone()));
            }
        }
        Ok(Self { cfg, stats, relations: schema.relations.clone(), tables: schema.tables.clone() })
    }

    pub fn num_attrs(&self, t: TableId) -> usize {
        self.stats.tables[t.0].columns.len()
    }

    /// `d_φ(T)`.
    pub fn input_dim(&self, t: TableId) -> usize {
        (self.num_attrs(t) + 1) * self.cfg.d_col
    }

    fn col_param(&self, t: TableId, col: &str, what: &str) -> String {
        format!("enc.col.{}.{col}.{what}", self.tables[t.0])
    }

    /// Create every encoder, projection and mask parameter.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let (d_col, d_g, d_l) = (self.cfg.d_col, self.cfg.d_g, self.cfg.d_l);
        for (ti, ts) in self.stats.tables.iter().enumerate() {
            let t = TableId(ti);
            for (_, name, stat) in &ts.columns {
                match stat {
                    ColumnStat::Categorical { .. } => {
                        store.insert_normal(self.col_param(t, name, "emb"), stat.input_width(), d_col, 1.0, rng)?;
                    }
                    _ => {
                        store.insert_glorot(self.col_param(t, name, "w"), stat.input_width(), d_col, rng)?;
                        store.insert(self.col_param(t, name, "b"), Tensor::zeros(1, d_col))?;
                    }
                }
            }
            store.insert_glorot(format!("enc.age.{}.w", self.tables[ti]), 2, d_col, rng)?;
            store.insert(format!("enc.age.{}.b", self.tables[ti]), Tensor::zeros(1, d_col))?;
            let m = ts.columns.len() * d_col;
            if m > 0 {
                store.insert_glorot(format!("mask.lift.{}", self.tables[ti]), d_g, m, rng)?;
            }
        }
        store.insert_normal("mask.h", 1, d_g, 1.0, rng)?;
        for l in 0..self.cfg.layers {
            let d_in = |t: TableId| if l == 0 { self.input_dim(t) } else { d_g };
            for (r, rel) in self.relations.iter().enumerate() {
                store.insert_glorot(format!("enc.gnn.{l}.rel.{r}.w"), d_in(rel.src), d_g, rng)?;
            }
            for ti in 0..self.tables.len() {
                let name = &self.tables[ti];
                store.insert_glorot(format!("enc.gnn.{l}.self.{name}.w"), d_in(TableId(ti)) + d_g, d_g, rng)?;
                store.insert(format!("enc.gnn.{l}.self.{name}.b"), Tensor::zeros(1, d_g))?;
            }
        }
        store.insert_glorot("proj.w1", d_g, d_g, rng)?;
        store.insert("proj.b1", Tensor::zeros(1, d_g))?;
        store.insert_glorot("proj.w2", d_g, d_l, rng)?;
        store.insert("proj.b2", Tensor::zeros(1, d_l))?;
        Ok(())
    }

    /// Initial embeddings `h^(0)` of `rows` of one table, seen from `t_star`.
    /// `masked[i]` lists the attribute ordinals of `rows[i]` to hide.
    pub fn encode_rows(
        &self,
        g: &mut Graph<'_>,
        db: &Database,
        t: TableId,
        rows: &[usize],
        t_star: Timestamp,
        masked: &[&[usize]],
    ) -> Result<Var> {
        let ts = &self.stats.tables[t.0];
        let table = db.table(t);
        let d_col = self.cfg.d_col;
        let n = rows.len();
        let lift = if masked.iter().any(|m| !m.is_empty()) {
            let h = g.param_named("mask.h")?;
            let l = g.param_named(&format!("mask.lift.{}", self.tables[t.0]))?;
            Some(g.matmul(h, l)?)
        } else {
            None
        };
        let mut parts = Vec::with_capacity(ts.columns.len() + 1);
        for (j, (c, name, stat)) in ts.columns.iter().enumerate() {
            let cells = rows.iter().map(|&r| &table.entities[r].attrs[*c]);
            let piece = match stat {
                ColumnStat::Categorical { .. } => {
                    let idx: Vec<usize> = cells.map(|cell| stat.category_row(cell)).collect();
                    let emb = g.param_named(&self.col_param(t, name, "emb"))?;
                    g.gather_rows(emb, &idx)?
                }
                _ => {
                    let w = stat.input_width();
                    let mut x = Tensor::zeros(n, w);
                    for (i, cell) in cells.enumerate() {
                        stat.features(cell, x.row_mut(i));
                    }
                    let x = g.constant(x);
                    let wv = g.param_named(&self.col_param(t, name, "w"))?;
                    let bv = g.param_named(&self.col_param(t, name, "b"))?;
                    g.linear(x, wv, Some(bv))?
                }
            };
            let hide: Vec<bool> = masked.iter().map(|m| m.contains(&j)).collect();
            let piece = match lift {
                Some(lift) if hide.iter().any(|&b| b) => {
                    let slice = g.slice_cols(lift, j * d_col, d_col)?;
                    g.row_override(piece, slice, &hide)?
                }
                _ => piece,
            };
            parts.push(piece);
        }
        let mut age = Tensor::zeros(n, 2);
        for (i, &r) in rows.iter().enumerate() {
            let tau = table.entities[r].time;
            if tau.is_finite() && t_star.is_finite() {
                age.set(i, 0, (t_star.secs() as f64 - tau.secs() as f64) / self.stats.age_scale);
            } else {
                age.set(i, 1, 1.0);
            }
        }
        let age = g.constant(age);
        let aw = g.param_named(&format!("enc.age.{}.w", self.tables[t.0]))?;
        let ab = g.param_named(&format!("enc.age.{}.b", self.tables[t.0]))?;
        parts.push(g.linear(age, aw, Some(ab))?);
        Ok(g.concat_cols(&parts)?)
    }

    /// `h^(0)` of a single node.
    pub fn encode_columns(&self, g: &mut Graph<'_>, db: &Database, v: NodeId, t_star: Timestamp) -> Result<Var> {
        self.encode_rows(g, db, v.table(), &[v.row()], t_star, &[&[]])
    }

    /// Initial embeddings of every subgraph node, grouped by table.
    pub fn encode_inputs(
        &self,
        g: &mut Graph<'_>,
        db: &Database,
        sub: &SampledSubgraph,
        mask: Option<&CellMask>,
    ) -> Result<Vec<TableBlock>> {
        let mut locals: Vec<Vec<usize>> = vec![Vec::new(); self.tables.len()];
        for (i, v) in sub.nodes.iter().enumerate() {
            locals[v.table().0].push(i);
        }
        let mut blocks = Vec::new();
        for (ti, locals) in locals.into_iter().enumerate() {
            if locals.is_empty() {
                continue;
            }
            let rows: Vec<usize> = locals.iter().map(|&i| sub.nodes[i].row()).collect();
            let masked: Vec<&[usize]> = locals.iter().map(|&i| mask.map_or(&[][..], |m| &m[i][..])).collect();
            let h = self.encode_rows(g, db, TableId(ti), &rows, sub.seed_time, &masked)?;
            blocks.push(TableBlock { table: TableId(ti), locals, h });
        }
        Ok(blocks)
    }

    /// Run the GNN over `sub`. With `dropout_rng` set, dropout is active.
    pub fn encode_graph(
        &self,
        g: &mut Graph<'_>,
        db: &Database,
        sub: &SampledSubgraph,
        mask: Option<&CellMask>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<GraphEncoding> {
        if sub.is_empty() {
            return Err(EncoderError::EmptySubgraph);
        }
        let mut blocks = self.encode_inputs(g, db, sub, mask)?;
        // Position of each local ordinal inside its table block.
        let mut pos = vec![(usize::MAX, 0); sub.len()];
        let mut block_of = vec![usize::MAX; self.tables.len()];
        for (b, blk) in blocks.iter().enumerate() {
            block_of[blk.table.0] = b;
            for (k, &i) in blk.locals.iter().enumerate() {
                pos[i] = (b, k);
            }
        }
        // Per relation, per destination position: source positions by ascending global id.
        let mut groups: Vec<Option<Vec<Vec<(NodeId, usize)>>>> = vec![None; self.relations.len()];
        for e in &sub.edges {
            let (db_, dk) = pos[e.dst];
            let gr = groups[e.rel.0].get_or_insert_with(|| vec![Vec::new(); blocks[db_].locals.len()]);
            gr[dk].push((sub.nodes[e.src], pos[e.src].1));
        }
        let groups: Vec<Option<Vec<Vec<usize>>>> = groups
            .into_iter()
            .map(|gr| {
                gr.map(|per_dst| {
                    per_dst
                        .into_iter()
                        .map(|mut l| {
                            l.sort_unstable_by_key(|&(id, _)| id);
                            l.into_iter().map(|(_, k)| k).collect()
                        })
                        .collect()
                })
            })
            .collect();

        for l in 0..self.cfg.layers {
            let mut next = Vec::with_capacity(blocks.len());
            for blk in &blocks {
                let n = blk.locals.len();
                let mut msg: Option<Var> = None;
                for (r, rel) in self.relations.iter().enumerate() {
                    let Some(gr) = &groups[r] else { continue };
                    if rel.dst != blk.table {
                        continue;
                    }
                    let src = blocks[block_of[rel.src.0]].h;
                    let w = g.param_named(&format!("enc.gnn.{l}.rel.{r}.w"))?;
                    let transformed = g.matmul(src, w)?;
                    let summed = g.segment_sum(transformed, gr)?;
                    msg = Some(match msg {
                        Some(m) => g.add(m, summed)?,
                        None => summed,
                    });
                }
                let msg = match msg {
                    Some(m) => m,
                    None => g.constant(Tensor::zeros(n, self.cfg.d_g)),
                };
                let name = &self.tables[blk.table.0];
                let w = g.param_named(&format!("enc.gnn.{l}.self.{name}.w"))?;
                let b = g.param_named(&format!("enc.gnn.{l}.self.{name}.b"))?;
                let x = g.concat_cols(&[blk.h, msg])?;
                let y = g.linear(x, w, Some(b))?;
                let mut y = g.relu(y);
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    if self.cfg.dropout > 0.0 {
                        let keep = 1.0 - self.cfg.dropout;
                        let mut m = Tensor::zeros(n, self.cfg.d_g);
                        for x in m.data_mut() {
                            *x = if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
                        }
                        y = g.mul_const(y, m)?;
                    }
                }
                next.push(TableBlock { table: blk.table, locals: blk.locals.clone(), h: y });
            }
            blocks = next;
        }
        let stacked: Vec<Var> = blocks.iter().map(|b| b.h).collect();
        let all = g.concat_rows(&stacked)?;
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut acc = 0;
        for b in &blocks {
            offsets.push(acc);
            acc += b.locals.len();
        }
        let order: Vec<usize> = pos.iter().map(|&(b, k)| offsets[b] + k).collect();
        let nodes = g.gather_rows(all, &order)?;
        let pooled = g.mean_rows(all);
        Ok(GraphEncoding { nodes, pooled })
    }

    /// Two-layer perceptron from `d_g` to `d_l`, applied row-wise.
    pub fn project(&self, g: &mut Graph<'_>, h: Var) -> Result<Var> {
        let w1 = g.param_named("proj.w1")?;
        let b1 = g.param_named("proj.b1")?;
        let w2 = g.param_named("proj.w2")?;
        let b2 = g.param_named("proj.b2")?;
        let x = g.linear(h, w1, Some(b1))?;
        let x = g.relu(x);
        Ok(g.linear(x, w2, Some(b2))?)
    }
}
