//! A small pre-norm causal transformer that reads a graph prompt followed by
//! text tokens.
//!
//! The input sequence is `[H*; E[text]; E[BOS]; E[y_<t]]`. Token rows are
//! `sqrt(d)·E[id] + P[pos]` with sinusoidal `P` at their absolute positions;
//! prompt rows enter unchanged. Output logits use the transposed token table.

mod vocab;

pub use vocab::{tokenize, Vocab, BOS, CLOSE, EOS, MASK, NO, OPEN, PAD, RESERVED, SPACE, UNK, YES};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, ParamStore, Tensor, Var};
use crate::task::AnswerStrategy;

#[derive(Debug, thiserror::Error)]
pub enum DecoderError {
    #[error("sequence of {len} positions exceeds the context cap {cap}")]
    ContextOverflow { len: usize, cap: usize },
    #[error("target sequence is empty")]
    EmptyTarget,
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DecoderError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Model width; equals the projection output `d_l`.
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub context: usize,
    /// When false, every `dec.*` parameter is frozen.
    pub trainable: bool,
    pub max_new_tokens: usize,
    pub head_hidden: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { d_model: 64, layers: 2, heads: 4, context: 512, trainable: false, max_new_tokens: 32, head_hidden: 32 }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.context == 0 {
            return Err("context must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Text(Vec<usize>),
    Distribution { yes: f64, no: f64 },
    Scalar(f64),
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    pub vocab_size: usize,
    positions: Tensor,
}

fn sinusoid(n: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(n, d);
    for p in 0..n {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = p as f64 * freq;
            t.set(p, i, if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    t
}

impl Decoder {
    pub fn new(cfg: DecoderConfig, vocab_size: usize) -> Self {
        let positions = sinusoid(cfg.context, cfg.d_model);
        Self { cfg, vocab_size, positions }
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let d = self.cfg.d_model;
        store.insert_normal("dec.tok", self.vocab_size, d, 1.0 / (d as f64).sqrt(), rng)?;
        for l in 0..self.cfg.layers {
            for ln in ["ln1", "ln2"] {
                store.insert(format!("dec.{l}.{ln}.g"), Tensor::filled(1, d, 1.0))?;
                store.insert(format!("dec.{l}.{ln}.b"), Tensor::zeros(1, d))?;
            }
            for w in ["q", "k", "v", "o"] {
                store.insert_glorot(format!("dec.{l}.attn.{w}.w"), d, d, rng)?;
                store.insert(format!("dec.{l}.attn.{w}.b"), Tensor::zeros(1, d))?;
            }
            store.insert_glorot(format!("dec.{l}.ffn.w1"), d, 4 * d, rng)?;
            store.insert(format!("dec.{l}.ffn.b1"), Tensor::zeros(1, 4 * d))?;
            store.insert_glorot(format!("dec.{l}.ffn.w2"), 4 * d, d, rng)?;
            store.insert(format!("dec.{l}.ffn.b2"), Tensor::zeros(1, d))?;
        }
        store.insert("dec.lnf.g", Tensor::filled(1, d, 1.0))?;
        store.insert("dec.lnf.b", Tensor::zeros(1, d))?;
        store.insert_glorot("head.w1", d, self.cfg.head_hidden, rng)?;
        store.insert("head.b1", Tensor::zeros(1, self.cfg.head_hidden))?;
        store.insert("head.w2", Tensor::zeros(self.cfg.head_hidden, 1))?;
        store.insert("head.b2", Tensor::zeros(1, 1))?;
        store.set_frozen_prefix("dec.", !self.cfg.trainable);
        Ok(())
    }

    /// `sqrt(d)·E[ids] + P[offset..offset + n]`; `0 × d` for no tokens.
    pub fn embed_text(&self, g: &mut Graph<'_>, ids: &[usize], offset: usize) -> Result<Var> {
        let d = self.cfg.d_model;
        if offset + ids.len() > self.cfg.context {
            return Err(DecoderError::ContextOverflow { len: offset + ids.len(), cap: self.cfg.context });
        }
        if ids.is_empty() {
            return Ok(g.constant(Tensor::zeros(0, d)));
        }
        let table = g.param_named("dec.tok")?;
        let rows = g.gather_rows(table, ids)?;
        let rows = g.scale(rows, (d as f64).sqrt());
        let pos = Tensor::from_vec(ids.len(), d, self.positions.data()[offset * d..(offset + ids.len()) * d].to_vec());
        let pos = g.constant(pos);
        Ok(g.add(rows, pos)?)
    }

    /// OPEN and CLOSE embeddings (`2 × d`) for prompt assembly.
    pub fn delimiters(&self, g: &mut Graph<'_>) -> Result<Var> {
        let table = g.param_named("dec.tok")?;
        let rows = g.gather_rows(table, &[OPEN, CLOSE])?;
        Ok(g.scale(rows, (self.cfg.d_model as f64).sqrt()))
    }

    fn norm(&self, g: &mut Graph<'_>, x: Var, name: &str) -> Result<Var> {
        let y = g.layer_norm(x, 1e-5);
        let gain = g.param_named(&format!("{name}.g"))?;
        let bias = g.param_named(&format!("{name}.b"))?;
        let y = g.mul_row(y, gain)?;
        Ok(g.add_row(y, bias)?)
    }

    fn dense(&self, g: &mut Graph<'_>, x: Var, w: &str, b: &str) -> Result<Var> {
        let w = g.param_named(w)?;
        let b = g.param_named(b)?;
        Ok(g.linear(x, w, Some(b))?)
    }

    /// Final hidden states for `[prefix; tokens]`.
    pub fn hidden(&self, g: &mut Graph<'_>, prefix: Var, tokens: &[usize]) -> Result<Var> {
        let p = g.shape(prefix)[0];
        let len = p + tokens.len();
        if len > self.cfg.context {
            return Err(DecoderError::ContextOverflow { len, cap: self.cfg.context });
        }
        let text = self.embed_text(g, tokens, p)?;
        let mut x = g.concat_rows(&[prefix, text])?;
        for l in 0..self.cfg.layers {
            let h = self.norm(g, x, &format!("dec.{l}.ln1"))?;
            let q = self.dense(g, h, &format!("dec.{l}.attn.q.w"), &format!("dec.{l}.attn.q.b"))?;
            let k = self.dense(g, h, &format!("dec.{l}.attn.k.w"), &format!("dec.{l}.attn.k.b"))?;
            let v = self.dense(g, h, &format!("dec.{l}.attn.v.w"), &format!("dec.{l}.attn.v.b"))?;
            let a = g.causal_attention(q, k, v, self.cfg.heads)?;
            let a = self.dense(g, a, &format!("dec.{l}.attn.o.w"), &format!("dec.{l}.attn.o.b"))?;
            x = g.add(x, a)?;
            let h = self.norm(g, x, &format!("dec.{l}.ln2"))?;
            let f = self.dense(g, h, &format!("dec.{l}.ffn.w1"), &format!("dec.{l}.ffn.b1"))?;
            let f = g.relu(f);
            let f = self.dense(g, f, &format!("dec.{l}.ffn.w2"), &format!("dec.{l}.ffn.b2"))?;
            x = g.add(x, f)?;
        }
        self.norm(g, x, "dec.lnf")
    }

    /// Vocabulary logits (`rows.len() × V`) at the given positions.
    pub fn logits_at(&self, g: &mut Graph<'_>, hidden: Var, rows: &[usize]) -> Result<Var> {
        let h = g.gather_rows(hidden, rows)?;
        let table = g.param_named("dec.tok")?;
        Ok(g.matmul_nt(h, table)?)
    }

    /// Mean next-token NLL of `target` after `[prefix; text; BOS]`, plus the
    /// `|target| × V` logits that produced it.
    pub fn teacher_forced(
        &self,
        g: &mut Graph<'_>,
        prefix: Var,
        text: &[usize],
        target: &[usize],
    ) -> Result<(Var, Var)> {
        if target.is_empty() {
            return Err(DecoderError::EmptyTarget);
        }
        let mut tokens = Vec::with_capacity(text.len() + target.len());
        tokens.extend_from_slice(text);
        tokens.push(BOS);
        tokens.extend_from_slice(&target[..target.len() - 1]);
        let h = self.hidden(g, prefix, &tokens)?;
        let start = g.shape(prefix)[0] + text.len();
        let rows: Vec<usize> = (start..start + target.len()).collect();
        let logits = self.logits_at(g, h, &rows)?;
        let lp = g.log_softmax_rows(logits);
        let picked = g.pick(lp, target)?;
        let mean = g.mean(picked);
        Ok((g.neg(mean), logits))
    }

    pub fn teacher_forced_loss(&self, g: &mut Graph<'_>, prefix: Var, text: &[usize], target: &[usize]) -> Result<Var> {
        Ok(self.teacher_forced(g, prefix, text, target)?.0)
    }

    /// `1 × 2` probabilities `[P(yes), P(no)]` for the first answer token.
    pub fn yes_no(&self, g: &mut Graph<'_>, prefix: Var, text: &[usize]) -> Result<Var> {
        let mut tokens = text.to_vec();
        tokens.push(BOS);
        let h = self.hidden(g, prefix, &tokens)?;
        let last = g.shape(h)[0] - 1;
        let logits = self.logits_at(g, h, &[last])?;
        let two = g.select_cols(logits, &[YES, NO])?;
        Ok(g.softmax_rows(two))
    }

    /// Scalar regression output (`1 × 1`) from the final hidden state.
    pub fn scalar(&self, g: &mut Graph<'_>, prefix: Var, text: &[usize]) -> Result<Var> {
        let mut tokens = text.to_vec();
        tokens.push(BOS);
        let h = self.hidden(g, prefix, &tokens)?;
        let last = g.shape(h)[0] - 1;
        let x = g.gather_rows(h, &[last])?;
        let x = self.dense(g, x, "head.w1", "head.b1")?;
        let x = g.relu(x);
        self.dense(g, x, "head.w2", "head.b2")
    }

    /// Greedy decoding until EOS or `max_new_tokens`; EOS is not returned.
    pub fn generate(&self, g: &mut Graph<'_>, prefix: Var, text: &[usize]) -> Result<Vec<usize>> {
        let mut tokens = text.to_vec();
        tokens.push(BOS);
        let mut out = Vec::new();
        let p = g.shape(prefix)[0];
        while out.len() < self.cfg.max_new_tokens && p + tokens.len() < self.cfg.context {
            let h = self.hidden(g, prefix, &tokens)?;
            let last = g.shape(h)[0] - 1;
            let logits = self.logits_at(g, h, &[last])?;
            let row = g.value(logits).row(0);
            let next = argmax(row);
            if next == EOS {
                break;
            }
            out.push(next);
            tokens.push(next);
        }
        Ok(out)
    }

    pub fn decode(&self, g: &mut Graph<'_>, prefix: Var, text: &[usize], strategy: AnswerStrategy) -> Result<Answer> {
        Ok(match strategy {
            AnswerStrategy::PlainText => Answer::Text(self.generate(g, prefix, text)?),
            AnswerStrategy::TokenDistribution => {
                let p = self.yes_no(g, prefix, text)?;
                let p = g.value(p);
                let yes = p.get(0, 0);
                Answer::Distribution { yes, no: 1.0 - yes }
            }
            AnswerStrategy::MlpHead => {
                let y = self.scalar(g, prefix, text)?;
                Answer::Scalar(g.value(y).item())
            }
        })
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
