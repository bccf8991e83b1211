//! Fine-tuning, evaluation, metrics, optimizers and the metrics log.
//!
//! Classification examples are scored by the decoder's yes/no distribution
//! and trained with focal loss; regression examples use the scalar head and
//! absolute error. Gradients of a batch are computed in parallel and summed
//! in example order, so results do not depend on the thread count.

mod log;
mod metrics;
mod optim;

pub use log::{MetricsLog, MetricsRow};
pub use metrics::{alpha_for, auroc, focal_loss, focal_loss_mean, focal_loss_var, mae, MetricError};
pub use optim::{Adam, Plateau, PlateauMode};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{check_gradients, GradCheckOptions, GradCheckReport, Gradients, Graph, ParamStore, Tensor, Var};
use crate::decoder::{EOS, NO, YES};
use crate::error::{Error, Result};
use crate::graph::EntityGraph;
use crate::model::RelModel;
use crate::prompt::{in_context_text, render_task_context, select_in_context_examples};
use crate::store::{Database, Timestamp};
use crate::task::{AnswerStrategy, Example, Split, TaskKind, TaskManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Non-zero switches the optimizer to decoupled weight decay.
    pub weight_decay: f64,
    pub patience: usize,
    pub factor: f64,
    /// Focal weight of positives; negatives get `1 - alpha`.
    pub alpha: f64,
    pub gamma: f64,
    /// Evaluate every this many steps; 0 evaluates at the end of each epoch.
    pub eval_every: usize,
    pub seed: u64,
    /// Deterministic subsample sizes; `None` uses every example.
    pub max_train: Option<usize>,
    pub max_eval: Option<usize>,
    pub n_inc: usize,
    /// Keep `enc.*` and `mask.*` fixed at their initial values.
    pub freeze_encoder: bool,
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.0,
            patience: 100,
            factor: 0.8,
            alpha: 0.4,
            gamma: 2.0,
            eval_every: 0,
            seed: 0,
            max_train: None,
            max_eval: None,
            n_inc: 0,
            freeze_encoder: false,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.gamma < 0.0 || self.weight_decay < 0.0 {
            return bad("gamma and weight_decay must be non-negative");
        }
        if !(self.factor > 0.0 && self.factor <= 1.0) {
            return bad("factor must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub split: Split,
    pub metric_name: String,
    pub value: f64,
    pub loss: f64,
    pub n: usize,
    /// Yes-probabilities (classification) or predictions (regression).
    pub scores: Vec<f64>,
}

pub struct TrainOutcome {
    /// Parameters at the best validation metric.
    pub best: ParamStore,
    pub best_metric: f64,
    pub best_step: u64,
    /// Parameters after the last step.
    pub last: ParamStore,
    pub log: MetricsLog,
}

/// Everything the per-example loss needs besides parameters.
pub struct TaskRun<'a> {
    pub model: &'a RelModel,
    pub db: &'a Database,
    pub graph: &'a EntityGraph,
    pub task: &'a TaskManifest,
    /// Token ids of the task text, including any in-context examples.
    pub text: Vec<usize>,
}

impl<'a> TaskRun<'a> {
    /// Resolve the task text; with `n_inc > 0` the in-context examples come
    /// from the earliest train seed time and are shared by every document.
    pub fn new(
        model: &'a RelModel,
        db: &'a Database,
        graph: &'a EntityGraph,
        task: &'a TaskManifest,
        train: &[Example],
        n_inc: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut ctx = render_task_context(task)?;
        if n_inc > 0 {
            let cutoff = icl_cutoff(train).ok_or_else(|| Error::Config("in-context examples need two train seed times".into()))?;
            let picked = select_in_context_examples(train, n_inc, cutoff, seed)?;
            let classification = task.kind == TaskKind::Classification;
            ctx.examples_text = Some(in_context_text(graph, db, &picked, &model.cfg.denorm, classification)?);
        }
        let text = model.vocab.encode_tokens(&ctx.tokens());
        Ok(Self { model, db, graph, task, text })
    }

    fn alpha_t(&self, label: f64, cfg: &TrainConfig) -> f64 {
        alpha_for(label > 0.5, cfg.alpha)
    }

    /// Loss and score of one example on graph `g`.
    pub fn example(
        &self,
        g: &mut Graph<'_>,
        ex: &Example,
        cfg: &TrainConfig,
        sampler_seed: u64,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, f64)> {
        let doc = self.model.document(self.graph, ex.entity, ex.seed_time, sampler_seed)?;
        let prefix = self.model.prompt_matrix(g, self.db, &doc, None, dropout)?;
        let dec = &self.model.decoder;
        match (self.task.kind, self.task.strategy) {
            (TaskKind::Regression, _) | (_, AnswerStrategy::MlpHead) => {
                let y = dec.scalar(g, prefix, &self.text)?;
                let score = g.value(y).item();
                let target = g.constant(Tensor::scalar(ex.label));
                let diff = g.sub(y, target)?;
                let loss = g.abs(diff);
                Ok((loss, score))
            }
            (TaskKind::Classification, AnswerStrategy::TokenDistribution) => {
                let probs = dec.yes_no(g, prefix, &self.text)?;
                let score = g.value(probs).get(0, 0);
                let col = if ex.label > 0.5 { 0 } else { 1 };
                let p = g.select_cols(probs, &[col])?;
                let loss = focal_loss_var(g, p, &[self.alpha_t(ex.label, cfg)], cfg.gamma)?;
                Ok((loss, score))
            }
            (TaskKind::Classification, AnswerStrategy::PlainText) => {
                let probs = dec.yes_no(g, prefix, &self.text)?;
                let score = g.value(probs).get(0, 0);
                let answer = if ex.label > 0.5 { YES } else { NO };
                let loss = dec.teacher_forced_loss(g, prefix, &self.text, &[answer, EOS])?;
                Ok((loss, score))
            }
        }
    }

    pub fn metric_mode(&self) -> PlateauMode {
        match self.task.kind {
            TaskKind::Classification => PlateauMode::Max,
            TaskKind::Regression => PlateauMode::Min,
        }
    }

    /// Score `examples` with fixed sampling and no dropout.
    pub fn evaluate(&self, store: &ParamStore, examples: &[Example], split: Split, cfg: &TrainConfig) -> Result<EvalResult> {
        let out: Vec<(f64, f64)> = examples
            .par_iter()
            .map(|ex| {
                let mut g = Graph::inference(store);
                let (loss, score) = self.example(&mut g, ex, cfg, cfg.seed, None)?;
                Ok((g.value(loss).item(), score))
            })
            .collect::<Result<_>>()?;
        let loss = out.iter().map(|x| x.0).sum::<f64>() / out.len().max(1) as f64;
        let scores: Vec<f64> = out.iter().map(|x| x.1).collect();
        let (metric_name, value) = match self.task.kind {
            TaskKind::Classification => {
                let labels: Vec<bool> = examples.iter().map(|e| e.label > 0.5).collect();
                ("auroc", auroc(&scores, &labels)?)
            }
            TaskKind::Regression => {
                let targets: Vec<f64> = examples.iter().map(|e| e.label).collect();
                ("mae", mae(&scores, &targets)?)
            }
        };
        Ok(EvalResult { split, metric_name: metric_name.into(), value, loss, n: examples.len(), scores })
    }
}

/// Second-smallest distinct seed time among `examples`.
fn icl_cutoff(examples: &[Example]) -> Option<Timestamp> {
    let mut times: Vec<Timestamp> = examples.iter().map(|e| e.seed_time).collect();
    times.sort_unstable();
    times.dedup();
    times.get(1).copied()
}

/// A deterministic subsample of at most `n` examples, in original order.
pub fn subsample(examples: &[Example], n: Option<usize>, seed: u64) -> Vec<Example> {
    match n {
        Some(n) if n < examples.len() => {
            let mut idx: Vec<usize> = (0..examples.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            idx.truncate(n);
            idx.sort_unstable();
            idx.into_iter().map(|i| examples[i]).collect()
        }
        _ => examples.to_vec(),
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        0.0
    } else {
        v[v.len() / 2]
    }
}

/// Evaluate a split; zero-shot evaluation applies only to classification.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &RelModel,
    store: &ParamStore,
    db: &Database,
    graph: &EntityGraph,
    task: &TaskManifest,
    examples: &[Example],
    split: Split,
    cfg: &TrainConfig,
    zero_shot: bool,
) -> Result<EvalResult> {
    if zero_shot && task.kind == TaskKind::Regression {
        return Err(Error::UnsupportedMode("zero-shot evaluation is not defined for regression tasks".into()));
    }
    let train: Vec<Example> = task.split(examples, Split::Train).into_iter().copied().collect();
    let run = TaskRun::new(model, db, graph, task, &train, cfg.n_inc, cfg.seed)?;
    let chosen: Vec<Example> = task.split(examples, split).into_iter().copied().collect();
    let chosen = subsample(&chosen, cfg.max_eval, cfg.seed ^ 0x5eed);
    run.evaluate(store, &chosen, split, cfg)
}

/// Fine-tune `store` on the task's train split, evaluating on val.
pub fn train(
    model: &RelModel,
    mut store: ParamStore,
    db: &Database,
    graph: &EntityGraph,
    task: &TaskManifest,
    examples: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    task.validate()?;
    let start = Instant::now();
    let all_train: Vec<Example> = task.split(examples, Split::Train).into_iter().copied().collect();
    let run = TaskRun::new(model, db, graph, task, &all_train, cfg.n_inc, cfg.seed)?;
    let mut train_set = all_train.clone();
    if cfg.n_inc > 0 {
        let cutoff = icl_cutoff(&all_train).expect("checked by TaskRun::new");
        train_set.retain(|e| e.seed_time >= cutoff);
    }
    let train_set = subsample(&train_set, cfg.max_train, cfg.seed);
    let val: Vec<Example> = task.split(examples, Split::Val).into_iter().copied().collect();
    let val = subsample(&val, cfg.max_eval, cfg.seed ^ 0x5eed);
    if train_set.is_empty() || val.is_empty() {
        return Err(Error::Config(format!("empty split: {} train, {} val examples", train_set.len(), val.len())));
    }

    if cfg.freeze_encoder {
        store.set_frozen_prefix("enc.", true);
        store.set_frozen_prefix("mask.", true);
    }
    if task.kind == TaskKind::Regression {
        let id = store.id("head.b2")?;
        if store.value(id).data() == [0.0] {
            let labels: Vec<f64> = train_set.iter().map(|e| e.label).collect();
            store.get_mut(id).value = Tensor::scalar(median(&labels));
        }
    }

    let mut opt = Adam::new(cfg.lr, cfg.weight_decay);
    let mut plateau = Plateau::new(run.metric_mode(), cfg.patience, cfg.factor);
    let mut log = MetricsLog::default();
    let mut best: Option<(f64, u64, ParamStore)> = None;
    let mut step: u64 = 0;
    let mut running = (0.0, 0usize);

    let wall = |log_wall: bool| log_wall.then(|| start.elapsed().as_millis() as u64);
    let mut evaluate_now = |store: &ParamStore,
                            step: u64,
                            opt: &mut Adam,
                            running: &mut (f64, usize),
                            log: &mut MetricsLog,
                            best: &mut Option<(f64, u64, ParamStore)>|
     -> Result<()> {
        let train_loss = if running.1 > 0 { running.0 / running.1 as f64 } else { f64::NAN };
        if running.1 > 0 {
            log.push(MetricsRow {
                step,
                split: "train".into(),
                metric_name: "loss".into(),
                value: train_loss,
                loss: train_loss,
                lr: opt.lr,
                wall_ms: wall(cfg.log_wall_time),
            });
        }
        *running = (0.0, 0);
        let r = run.evaluate(store, &val, Split::Val, cfg)?;
        log.push(MetricsRow {
            step,
            split: "val".into(),
            metric_name: r.metric_name.clone(),
            value: r.value,
            loss: r.loss,
            lr: opt.lr,
            wall_ms: wall(cfg.log_wall_time),
        });
        let better = match best {
            None => true,
            Some((b, _, _)) => match plateau.mode {
                PlateauMode::Max => r.value > *b,
                PlateauMode::Min => r.value < *b,
            },
        };
        if better {
            *best = Some((r.value, step, store.clone()));
        }
        opt.lr = plateau.step(r.value, opt.lr);
        Ok(())
    };

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(Gradients, f64)> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &train_set[i];
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ step.wrapping_mul(1_000_003) ^ i as u64);
                    let mut g = Graph::new(&store);
                    let sampler_seed = cfg.seed.wrapping_add(epoch as u64 + 1);
                    let (loss, _) = run.example(&mut g, ex, cfg, sampler_seed, Some(&mut rng))?;
                    let value = g.value(loss).item();
                    Ok((g.backward(loss)?, value))
                })
                .collect::<Result<_>>()?;
            let mut grads = Gradients::default();
            for (gr, l) in results {
                grads.merge(gr);
                running.0 += l;
                running.1 += 1;
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut store, &grads);
            step += 1;
            if cfg.eval_every > 0 && step.is_multiple_of(cfg.eval_every as u64) {
                evaluate_now(&store, step, &mut opt, &mut running, &mut log, &mut best)?;
            }
        }
        if cfg.eval_every == 0 {
            evaluate_now(&store, step, &mut opt, &mut running, &mut log, &mut best)?;
        }
    }
    if best.is_none() || (cfg.eval_every > 0 && !step.is_multiple_of(cfg.eval_every as u64)) {
        evaluate_now(&store, step, &mut opt, &mut running, &mut log, &mut best)?;
    }
    let (best_metric, best_step, best_store) = best.expect("at least one evaluation");
    Ok(TrainOutcome { best: best_store, best_metric, best_step, last: store, log })
}

/// Finite-difference check of the whole pipeline on one example: column
/// encoders, message passing, projection, prompt assembly, decoder and the
/// task loss. Every parameter, including the decoder's, is checked.
pub fn pipeline_grad_check(
    run: &TaskRun<'_>,
    store: &mut ParamStore,
    ex: &Example,
    cfg: &TrainConfig,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let frozen: Vec<_> = store.ids().filter(|&id| store.get(id).frozen).collect();
    for &id in &frozen {
        store.get_mut(id).frozen = false;
    }
    let report = check_gradients(store, |g| Ok::<_, Error>(run.example(g, ex, cfg, cfg.seed, None)?.0), opts);
    for id in frozen {
        store.get_mut(id).frozen = true;
    }
    report
}
