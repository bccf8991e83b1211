//! Denormalized entity trees, graph prompts and task text.
//!
//! A document for seed entity `v*` at time `t*` consists of a
//! [`DenormTree`] (the seed plus linked entities), the [`GraphPrompt`] that
//! lays the tree out as a flat slot sequence for the decoder, and a
//! [`TaskContext`] holding the task description and question.

mod denorm;
mod document;
mod slots;
pub mod templates;

pub use denorm::{denormalize, DenormConfig, DenormTree, TreeNode};
pub use document::{child_key, document_value, serialize_document};
pub use slots::{GraphPrompt, Slot};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::AutodiffError;
use crate::decoder::tokenize;
use crate::graph::{EntityGraph, GraphError, NodeId};
use crate::store::{Database, Timestamp};
use crate::task::{Example, TaskManifest};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("no projected embedding for node {0:?}")]
    MissingEmbedding(NodeId),
    #[error("prompt has a pooled slot but no pooled embedding was given")]
    MissingPooled,
    #[error("no template registered for task `{0}`")]
    UnknownTask(String),
    #[error("wanted {wanted} in-context examples per class, found {positives} positive and {negatives} negative")]
    InsufficientExamples { wanted: usize, positives: usize, negatives: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskContext {
    pub task_text: String,
    pub question_text: String,
    /// Rendered in-context examples, placed between task and question.
    pub examples_text: Option<String>,
}

impl TaskContext {
    pub fn full_text(&self) -> String {
        match &self.examples_text {
            Some(x) => format!("{} {} {}", self.task_text, x, self.question_text),
            None => format!("{} {}", self.task_text, self.question_text),
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.full_text())
    }
}

/// Resolve the description and question of a task; manifest overrides take
/// precedence over the registered templates.
pub fn render_task_context(task: &TaskManifest) -> Result<TaskContext, PromptError> {
    let registered = templates::lookup(&task.task_id);
    let task_text = task.description.clone().or(registered.map(|r| r.0.to_string()));
    let question_text = task.question.clone().or(registered.map(|r| r.1.to_string()));
    match (task_text, question_text) {
        (Some(task_text), Some(question_text)) => Ok(TaskContext { task_text, question_text, examples_text: None }),
        _ => Err(PromptError::UnknownTask(task.task_id.clone())),
    }
}

/// Pick `n_inc` labeled examples with seed time strictly before `t_star`,
/// balanced between positive (`label > 0.5`) and negative labels so that the
/// class counts differ by at most one.
///
/// The draw depends only on `(train, n_inc, t_star, rng_seed)`; callers pass
/// one `t_star` per task so every document shares the same examples.
pub fn select_in_context_examples(
    train: &[Example],
    n_inc: usize,
    t_star: Timestamp,
    rng_seed: u64,
) -> Result<Vec<Example>, PromptError> {
    if n_inc == 0 {
        return Ok(Vec::new());
    }
    let mut cands: Vec<&Example> = train.iter().filter(|e| e.seed_time < t_star).collect();
    cands.sort_by(|a, b| a.seed_time.cmp(&b.seed_time).then(a.entity.cmp(&b.entity)));
    let (pos, neg): (Vec<&Example>, Vec<&Example>) = cands.into_iter().partition(|e| e.label > 0.5);
    let (big, small) = (n_inc.div_ceil(2), n_inc / 2);
    let (n_pos, n_neg) = if pos.len() >= neg.len() { (big, small) } else { (small, big) };
    if pos.len() < n_pos || neg.len() < n_neg {
        return Err(PromptError::InsufficientExamples { wanted: big, positives: pos.len(), negatives: neg.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out: Vec<Example> = Vec::with_capacity(n_inc);
    for (pool, k) in [(&pos, n_pos), (&neg, n_neg)] {
        let mut idx = sample(&mut rng, pool.len(), k).into_vec();
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|i| *pool[i]));
    }
    out.sort_by(|a, b| a.seed_time.cmp(&b.seed_time).then(a.entity.cmp(&b.entity)));
    Ok(out)
}

/// Flat text for in-context examples: each example's document followed by
/// its answer.
pub fn in_context_text(
    g: &EntityGraph,
    db: &Database,
    examples: &[Example],
    cfg: &DenormConfig,
    classification: bool,
) -> Result<String, PromptError> {
    let mut parts = Vec::with_capacity(examples.len());
    for e in examples {
        let tree = denormalize(g, e.entity, e.seed_time, cfg)?;
        let answer = if classification {
            (if e.label > 0.5 { "Yes" } else { "No" }).to_string()
        } else {
            format!("{}", e.label)
        };
        parts.push(format!("Example: {} Answer: {answer}.", serialize_document(&tree, db)));
    }
    Ok(parts.join(" "))
}

#[cfg(test)]
mod tests;
