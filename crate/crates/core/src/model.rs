//! The full model: encoder, projection, graph prompt and decoder, plus the
//! on-disk layout of a trained model directory.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{load_checkpoint, save_checkpoint, Graph, ParamStore, Var};
use crate::decoder::{Decoder, DecoderConfig, Vocab};
use crate::encoder::{CellMask, Encoder, EncoderConfig, EncoderStats};
use crate::error::{Error, Result};
use crate::graph::{EntityGraph, NodeId};
use crate::prompt::{denormalize, DenormConfig, DenormTree, GraphPrompt};
use crate::sampler::{sample_subgraph, SampledSubgraph, SamplerConfig};
use crate::store::{Database, Timestamp};

pub const MODEL_FILE: &str = "model.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub sampler: SamplerConfig,
    pub denorm: DenormConfig,
    /// Lead the graph prompt with the pooled subgraph embedding.
    pub include_pooled: bool,
    /// Most frequent attribute values that become single vocabulary tokens.
    pub max_value_tokens: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            sampler: SamplerConfig::default(),
            denorm: DenormConfig::default(),
            include_pooled: true,
            max_value_tokens: 2000,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate().map_err(Error::Config)?;
        self.decoder.validate().map_err(Error::Config)?;
        if self.encoder.d_l != self.decoder.d_model {
            return Err(Error::Config(format!(
                "projection width d_l = {} differs from decoder width {}",
                self.encoder.d_l, self.decoder.d_model
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    config: ModelConfig,
    stats: EncoderStats,
}

/// One seed entity at one seed time, laid out for the model.
#[derive(Debug, Clone)]
pub struct Document {
    /// Sampled neighborhood extended with every tree entity.
    pub sub: SampledSubgraph,
    pub tree: DenormTree,
    pub prompt: GraphPrompt,
}

#[derive(Debug, Clone)]
pub struct RelModel {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub vocab: Vocab,
}

impl RelModel {
    /// Fit column statistics on rows with time `<= fit_cutoff` and build
    /// the vocabulary from `db`.
    pub fn new(cfg: ModelConfig, db: &Database, graph: &EntityGraph, fit_cutoff: Timestamp) -> Result<Self> {
        cfg.validate()?;
        let stats = EncoderStats::fit(db, fit_cutoff, cfg.encoder.text_buckets, cfg.encoder.max_categories);
        let vocab = Vocab::build(db, &[], cfg.max_value_tokens);
        Self::from_parts(cfg, stats, vocab, graph)
    }

    pub fn from_parts(cfg: ModelConfig, stats: EncoderStats, vocab: Vocab, graph: &EntityGraph) -> Result<Self> {
        cfg.validate()?;
        let encoder = Encoder::new(cfg.encoder.clone(), stats, &graph.schema)?;
        let decoder = Decoder::new(cfg.decoder.clone(), vocab.len());
        Ok(Self { cfg, encoder, decoder, vocab })
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.encoder.init_params(&mut store, &mut rng)?;
        self.decoder.init_params(&mut store, &mut rng)?;
        Ok(store)
    }

    pub fn document(&self, graph: &EntityGraph, seed: NodeId, t_star: Timestamp, sampler_seed: u64) -> Result<Document> {
        let scfg = SamplerConfig { rng_seed: sampler_seed, ..self.cfg.sampler.clone() };
        let mut sub = sample_subgraph(graph, seed, t_star, &scfg)?;
        let tree = denormalize(graph, seed, t_star, &self.cfg.denorm)?;
        let extra: Vec<(NodeId, usize)> = tree.nodes.iter().map(|n| (n.entity, n.depth)).collect();
        sub.extend_with(graph, &extra);
        let prompt = GraphPrompt::build(&tree, self.cfg.include_pooled);
        Ok(Document { sub, tree, prompt })
    }

    /// Encode the document's subgraph and lay the projected tree vectors
    /// out as the `len × d_l` graph prompt.
    pub fn prompt_matrix(
        &self,
        g: &mut Graph<'_>,
        db: &Database,
        doc: &Document,
        mask: Option<&CellMask>,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let enc = self.encoder.encode_graph(g, db, &doc.sub, mask, dropout)?;
        let entities = doc.tree.entities();
        let rows: Vec<usize> = entities
            .iter()
            .map(|&v| doc.sub.local_of(v).expect("tree entities are in the subgraph"))
            .collect();
        let h = g.gather_rows(enc.nodes, &rows)?;
        let projected = self.encoder.project(g, h)?;
        let pooled = if self.cfg.include_pooled { Some(self.encoder.project(g, enc.pooled)?) } else { None };
        let delims = self.decoder.delimiters(g)?;
        let local_of = |v: NodeId| entities.iter().position(|&w| w == v);
        Ok(doc.prompt.assemble(g, projected, local_of, pooled, delims)?)
    }

    /// Write `model.json`, `vocab.txt` and, if given, `checkpoint.bin`.
    pub fn save(&self, dir: &Path, store: Option<&ParamStore>) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let file = ModelFile { config: self.cfg.clone(), stats: self.encoder.stats.clone() };
        std::fs::write(dir.join(MODEL_FILE), serde_json::to_string_pretty(&file)? + "\n")?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        if let Some(store) = store {
            save_checkpoint(store, &dir.join(CHECKPOINT_FILE))?;
        }
        Ok(())
    }

    /// Load a model directory; the checkpoint's frozen flags follow the
    /// decoder's `trainable` setting.
    pub fn load(dir: &Path, graph: &EntityGraph) -> Result<(Self, ParamStore)> {
        let file: ModelFile = serde_json::from_reader(std::fs::File::open(dir.join(MODEL_FILE))?)?;
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        let model = Self::from_parts(file.config, file.stats, vocab, graph)?;
        let mut store = load_checkpoint(&dir.join(CHECKPOINT_FILE))?;
        store.set_frozen_prefix("dec.", !model.cfg.decoder.trainable);
        Ok((model, store))
    }
}
