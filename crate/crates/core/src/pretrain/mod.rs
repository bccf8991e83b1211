//! Masked-attribute pretraining.
//!
//! A document is a subgraph sampled around one seed entity at the pretraining
//! cutoff. A [`MaskPlan`] picks the masked entities of the subgraph; their
//! attribute inputs are replaced by the lifted mask embedding before the
//! encoder runs, and the decoder must reconstruct each masked entity's
//! attributes as `key is value, ...` from a single-node graph prompt and the
//! masked template `key is [MASK], ...`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, ParamStore, Var};
use crate::decoder::{argmax, Vocab, EOS, MASK};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::graph::{EntityGraph, NodeId};
use crate::model::RelModel;
use crate::prompt::{DenormTree, GraphPrompt, TreeNode};
use crate::sampler::{sample_subgraph, SampledSubgraph, SamplerConfig};
use crate::store::{Cell, Database, TableId, Timestamp};
use crate::train::{Adam, MetricsLog, MetricsRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Every attribute of a masked entity is hidden.
    #[default]
    Entity,
    /// Each attribute of a masked entity is hidden independently.
    Cell,
}

impl FromStr for MaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "entity" => Ok(Self::Entity),
            "cell" => Ok(Self::Cell),
            other => Err(format!("unknown mask mode `{other}` (expected entity or cell)")),
        }
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Entity => "entity",
            Self::Cell => "cell",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MaskedEntity {
    pub entity: NodeId,
    /// Local ordinal in the subgraph.
    pub local: usize,
    /// Hidden attribute ordinals, ascending and nonempty.
    pub cells: Vec<usize>,
    /// Permutation of all attribute ordinals of the entity's table.
    pub perm: Vec<usize>,
}

impl MaskedEntity {
    /// Attribute ordinals of the target sequence: `perm` restricted to `cells`.
    pub fn target_order(&self) -> Vec<usize> {
        self.perm.iter().copied().filter(|c| self.cells.binary_search(c).is_ok()).collect()
    }
}

/// Which entities of one subgraph are masked, and how.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskPlan {
    pub mode: MaskMode,
    pub p_mask: f64,
    pub seed: u64,
    /// Number of maskable entities (those with at least one attribute).
    pub candidates: usize,
    /// Ascending by local ordinal.
    pub masked: Vec<MaskedEntity>,
}

impl MaskPlan {
    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    /// Realized masking ratio `|V_mask| / |V◇|`.
    pub fn ratio(&self) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            self.masked.len() as f64 / self.candidates as f64
        }
    }

    /// Encoder cell mask for a subgraph of `n` nodes.
    pub fn cell_mask(&self, n: usize) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); n];
        for e in &self.masked {
            m[e.local] = e.cells.clone();
        }
        m
    }
}

/// Draw a mask plan over the nodes of `sub`.
///
/// Each node with at least one attribute is masked with probability
/// `p_mask`. In cell mode every attribute of a masked node is hidden with
/// probability `p_mask`, and at least one is always hidden. Without
/// `permute` the column order is the identity.
pub fn mask_subgraph(
    sub: &SampledSubgraph,
    num_attrs: impl Fn(TableId) -> usize,
    p_mask: f64,
    mode: MaskMode,
    permute: bool,
    seed: u64,
) -> Result<MaskPlan> {
    if !(0.0..=1.0).contains(&p_mask) {
        return Err(Error::Config(format!("p_mask {p_mask} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates = 0;
    let mut masked = Vec::new();
    for (local, &v) in sub.nodes.iter().enumerate() {
        let m = num_attrs(v.table());
        if m == 0 {
            continue;
        }
        candidates += 1;
        if !rng.gen_bool(p_mask) {
            continue;
        }
        let cells: Vec<usize> = match mode {
            MaskMode::Entity => (0..m).collect(),
            MaskMode::Cell => {
                let mut c: Vec<usize> = (0..m).filter(|_| rng.gen_bool(p_mask)).collect();
                if c.is_empty() {
                    c.push(rng.gen_range(0..m));
                }
                c
            }
        };
        let mut perm: Vec<usize> = (0..m).collect();
        if permute {
            perm.shuffle(&mut rng);
        }
        masked.push(MaskedEntity { entity: v, local, cells, perm });
    }
    Ok(MaskPlan { mode, p_mask, seed, candidates, masked })
}

/// Masked template and reconstruction target of one entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MaskTargets {
    /// `k is [MASK], ...`
    pub x: Vec<usize>,
    /// `k is a, ...`, without the end-of-sequence token.
    pub y: Vec<usize>,
    /// Token positions in `y` that belong to values.
    pub value_positions: Vec<usize>,
}

/// Text form of the template and target for `(key, value)` pairs listed in
/// `order`; missing values read `missing`.
pub fn render_mask_targets(pairs: &[(&str, Option<String>)], order: &[usize]) -> (String, String) {
    let mut x = Vec::with_capacity(order.len());
    let mut y = Vec::with_capacity(order.len());
    for &j in order {
        let (k, v) = &pairs[j];
        x.push(format!("{k} is [MASK]"));
        y.push(format!("{k} is {}", v.as_deref().unwrap_or("missing")));
    }
    (x.join(", "), y.join(", "))
}

/// `(name, rendered value)` of every attribute of `v`, in ordinal order.
pub fn attribute_pairs(encoder: &Encoder, db: &Database, v: NodeId) -> Vec<(String, Option<String>)> {
    let entity = db.entity(v.table(), v.row());
    encoder.stats.tables[v.table().0]
        .columns
        .iter()
        .map(|(c, name, _)| (name.clone(), entity.attrs[*c].render()))
        .collect()
}

/// Token sequences for `v` with attributes listed in `order`.
pub fn build_mask_targets(
    vocab: &Vocab,
    pairs: &[(String, Option<String>)],
    order: &[usize],
) -> MaskTargets {
    let is = vocab.encode_text("is");
    let comma = vocab.encode_text(",");
    let (mut x, mut y, mut value_positions) = (Vec::new(), Vec::new(), Vec::new());
    for (i, &j) in order.iter().enumerate() {
        if i > 0 {
            x.extend_from_slice(&comma);
            y.extend_from_slice(&comma);
        }
        let (k, v) = &pairs[j];
        let key = vocab.encode_text(k);
        x.extend_from_slice(&key);
        x.extend_from_slice(&is);
        x.push(MASK);
        y.extend_from_slice(&key);
        y.extend_from_slice(&is);
        let value = vocab.encode_value(v.as_deref().unwrap_or("missing"));
        value_positions.extend(y.len()..y.len() + value.len());
        y.extend_from_slice(&value);
    }
    MaskTargets { x, y, value_positions }
}

/// One pretraining document: a subgraph, its mask plan and one target per
/// masked entity.
#[derive(Debug, Clone)]
pub struct PretrainDoc {
    pub sub: SampledSubgraph,
    pub plan: MaskPlan,
    pub targets: Vec<MaskTargets>,
}

/// Teacher-forced outputs of one masked entity.
struct NodeOutput {
    loss: Var,
    logits: Var,
}

fn doc_outputs(g: &mut Graph<'_>, model: &RelModel, db: &Database, doc: &PretrainDoc, dropout: Option<&mut ChaCha8Rng>) -> Result<Vec<NodeOutput>> {
    let mask = doc.plan.cell_mask(doc.sub.len());
    let enc = model.encoder.encode_graph(g, db, &doc.sub, Some(&mask), dropout)?;
    let locals: Vec<usize> = doc.plan.masked.iter().map(|m| m.local).collect();
    let h = g.gather_rows(enc.nodes, &locals)?;
    let projected = model.encoder.project(g, h)?;
    let pooled = if model.cfg.include_pooled { Some(model.encoder.project(g, enc.pooled)?) } else { None };
    let delims = model.decoder.delimiters(g)?;
    let mut out = Vec::with_capacity(locals.len());
    for (i, (m, t)) in doc.plan.masked.iter().zip(&doc.targets).enumerate() {
        let tree = DenormTree {
            nodes: vec![TreeNode { entity: m.entity, parent: None, depth: 0, children: Vec::new() }],
            visited: vec![m.entity.table()],
            t_star: doc.sub.seed_time,
        };
        let prompt = GraphPrompt::build(&tree, model.cfg.include_pooled);
        let row = g.gather_rows(projected, &[i])?;
        let prefix = prompt.assemble(g, row, |v| (v == m.entity).then_some(0), pooled, delims)?;
        let mut target = t.y.clone();
        target.push(EOS);
        let (loss, logits) = model.decoder.teacher_forced(g, prefix, &t.x, &target)?;
        out.push(NodeOutput { loss, logits });
    }
    Ok(out)
}

/// Mean over the document's masked entities of each entity's mean token
/// negative log-likelihood.
pub fn doc_loss(g: &mut Graph<'_>, model: &RelModel, db: &Database, doc: &PretrainDoc, dropout: Option<&mut ChaCha8Rng>) -> Result<Var> {
    if doc.plan.is_empty() {
        return Err(Error::EmptyMaskSet);
    }
    let outs = doc_outputs(g, model, db, doc, dropout)?;
    let losses: Vec<Var> = outs.iter().map(|o| o.loss).collect();
    let stacked = g.concat_rows(&losses)?;
    Ok(g.mean(stacked))
}

/// Batch loss: the mean of per-entity token-mean losses over every masked
/// entity in `docs`.
pub fn pretrain_loss(g: &mut Graph<'_>, model: &RelModel, db: &Database, docs: &[PretrainDoc]) -> Result<Var> {
    let mut losses = Vec::new();
    for doc in docs {
        if doc.plan.is_empty() {
            continue;
        }
        losses.extend(doc_outputs(g, model, db, doc, None)?.into_iter().map(|o| o.loss));
    }
    if losses.is_empty() {
        return Err(Error::EmptyMaskSet);
    }
    let stacked = g.concat_rows(&losses)?;
    Ok(g.mean(stacked))
}

/// Reconstruction quality of a set of documents under greedy next-token
/// prediction with teacher forcing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReconstructionStats {
    pub loss: f64,
    /// Correct fraction over all target tokens, including separators and EOS.
    pub token_accuracy: f64,
    /// Correct fraction over value tokens only.
    pub value_accuracy: f64,
    pub entities: usize,
}

pub fn reconstruction(model: &RelModel, store: &ParamStore, db: &Database, docs: &[PretrainDoc]) -> Result<ReconstructionStats> {
    let per_doc: Vec<(f64, usize, usize, usize, usize, usize)> = docs
        .par_iter()
        .filter(|d| !d.plan.is_empty())
        .map(|doc| {
            let mut g = Graph::inference(store);
            let outs = doc_outputs(&mut g, model, db, doc, None)?;
            let (mut loss, mut hit, mut total, mut vhit, mut vtotal) = (0.0, 0, 0, 0, 0);
            for (o, t) in outs.iter().zip(&doc.targets) {
                loss += g.value(o.loss).item();
                let logits = g.value(o.logits);
                for (i, &want) in t.y.iter().chain(std::iter::once(&EOS)).enumerate() {
                    let ok = argmax(logits.row(i)) == want;
                    hit += usize::from(ok);
                    total += 1;
                    if t.value_positions.binary_search(&i).is_ok() {
                        vhit += usize::from(ok);
                        vtotal += 1;
                    }
                }
            }
            Ok((loss, outs.len(), hit, total, vhit, vtotal))
        })
        .collect::<Result<_>>()?;
    let sum = per_doc.iter().fold((0.0, 0, 0, 0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3, a.4 + b.4, a.5 + b.5));
    if sum.1 == 0 {
        return Err(Error::EmptyMaskSet);
    }
    Ok(ReconstructionStats {
        loss: sum.0 / sum.1 as f64,
        token_accuracy: sum.2 as f64 / sum.3 as f64,
        value_accuracy: if sum.5 == 0 { 1.0 } else { sum.4 as f64 / sum.5 as f64 },
        entities: sum.1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub p_mask: f64,
    pub mode: MaskMode,
    pub permute: bool,
    pub seed: u64,
    /// Evaluate every this many steps; 0 evaluates once per epoch.
    pub eval_every: usize,
    /// Documents are sampled at this time; `None` uses the latest entity time.
    pub cutoff: Option<Timestamp>,
    pub max_docs: Option<usize>,
    /// Apply encoder dropout during training steps.
    pub dropout: bool,
    pub log_wall_time: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 16,
            lr: 1e-3,
            weight_decay: 0.0,
            p_mask: 0.5,
            mode: MaskMode::Entity,
            permute: true,
            seed: 0,
            eval_every: 0,
            cutoff: None,
            max_docs: None,
            dropout: true,
            log_wall_time: false,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_mask) {
            return Err(Error::Config(format!("p_mask {} outside [0, 1]", self.p_mask)));
        }
        if self.batch_size == 0 || self.lr.is_nan() || self.lr <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("batch_size and lr must be positive, weight_decay non-negative".into()));
        }
        Ok(())
    }
}

/// Seeds of pretraining documents: entities with at least one attribute
/// that exist at `cutoff`, in node order.
pub fn document_seeds(model: &RelModel, graph: &EntityGraph, cutoff: Timestamp) -> Vec<NodeId> {
    graph.nodes().filter(|&v| model.encoder.num_attrs(v.table()) > 0 && graph.time(v) <= cutoff).collect()
}

/// Sample, mask and tokenize one document per seed. Masks depend only on
/// `(cfg.seed, document index)`; documents whose draw is empty are dropped.
pub fn build_documents(model: &RelModel, db: &Database, graph: &EntityGraph, cfg: &PretrainConfig) -> Result<Vec<PretrainDoc>> {
    cfg.validate()?;
    let cutoff = cfg.cutoff.or_else(|| db.max_time()).unwrap_or(Timestamp::POS_INF);
    let mut seeds = document_seeds(model, graph, cutoff);
    if let Some(n) = cfg.max_docs {
        if n < seeds.len() {
            let mut idx: Vec<usize> = (0..seeds.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
            idx.truncate(n);
            idx.sort_unstable();
            seeds = idx.into_iter().map(|i| seeds[i]).collect();
        }
    }
    let scfg = SamplerConfig { rng_seed: cfg.seed, ..model.cfg.sampler.clone() };
    let docs: Vec<Option<PretrainDoc>> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let sub = sample_subgraph(graph, seed, cutoff, &scfg)?;
            let plan_seed = cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ i as u64;
            let plan = mask_subgraph(&sub, |t| model.encoder.num_attrs(t), cfg.p_mask, cfg.mode, cfg.permute, plan_seed)?;
            if plan.is_empty() {
                return Ok(None);
            }
            let targets = plan
                .masked
                .iter()
                .map(|m| build_mask_targets(&model.vocab, &attribute_pairs(&model.encoder, db, m.entity), &m.target_order()))
                .collect();
            Ok(Some(PretrainDoc { sub, plan, targets }))
        })
        .collect::<Result<_>>()?;
    let docs: Vec<PretrainDoc> = docs.into_iter().flatten().collect();
    if docs.is_empty() {
        return Err(Error::EmptyMaskSet);
    }
    Ok(docs)
}

pub struct PretrainOutcome {
    pub store: ParamStore,
    pub log: MetricsLog,
    pub docs: usize,
    pub masked_entities: usize,
    pub final_stats: ReconstructionStats,
}

/// Optimize the masked-attribute objective over `docs`. Each evaluation logs
/// the full-data loss and the token accuracy under split `pretrain`.
pub fn pretrain_on(
    model: &RelModel,
    mut store: ParamStore,
    db: &Database,
    docs: &[PretrainDoc],
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut opt = Adam::new(cfg.lr, cfg.weight_decay);
    let mut log = MetricsLog::default();
    let mut step: u64 = 0;
    let record = |store: &ParamStore, step: u64, lr: f64, log: &mut MetricsLog| -> Result<ReconstructionStats> {
        let s = reconstruction(model, store, db, docs)?;
        let wall_ms = cfg.log_wall_time.then(|| start.elapsed().as_millis() as u64);
        for (name, value) in [("loss", s.loss), ("token_accuracy", s.token_accuracy)] {
            log.push(MetricsRow {
                step,
                split: "pretrain".into(),
                metric_name: name.into(),
                value,
                loss: s.loss,
                lr,
                wall_ms,
            });
        }
        Ok(s)
    };
    let mut last = record(&store, 0, opt.lr, &mut log)?;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64 + 1).wrapping_mul(0xa076_1d64_78bd_642f)));
        for batch in order.chunks(cfg.batch_size) {
            let grads: Vec<Gradients> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = Graph::new(&store);
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ step.wrapping_mul(1_000_003) ^ i as u64);
                    let loss = doc_loss(&mut g, model, db, &docs[i], cfg.dropout.then_some(&mut rng))?;
                    Ok(g.backward(loss)?)
                })
                .collect::<Result<_>>()?;
            let mut total = Gradients::default();
            for gr in grads {
                total.merge(gr);
            }
            total.scale(1.0 / batch.len() as f64);
            opt.step(&mut store, &total);
            step += 1;
            if cfg.eval_every > 0 && step.is_multiple_of(cfg.eval_every as u64) {
                last = record(&store, step, opt.lr, &mut log)?;
            }
        }
        if cfg.eval_every == 0 {
            last = record(&store, step, opt.lr, &mut log)?;
        }
    }
    let masked_entities = docs.iter().map(|d| d.plan.masked.len()).sum();
    Ok(PretrainOutcome { store, log, docs: docs.len(), masked_entities, final_stats: last })
}

/// Build documents from `db` and pretrain on them.
pub fn pretrain(
    model: &RelModel,
    store: ParamStore,
    db: &Database,
    graph: &EntityGraph,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    let docs = build_documents(model, db, graph, cfg)?;
    pretrain_on(model, store, db, &docs, cfg)
}

/// Replace every attribute of `v` by `f(old)`.
pub fn perturb_attributes(db: &mut Database, v: NodeId, mut f: impl FnMut(&Cell) -> Cell) {
    let table = &mut db.tables[v.table().0];
    let cols = table.attribute_columns();
    let attrs = &mut table.entities[v.row()].attrs;
    for c in cols {
        attrs[c] = f(&attrs[c]);
    }
}
