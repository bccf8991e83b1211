//! Command-line front end. Every subcommand resolves one [`RunConfig`],
//! prints it, and writes its outputs under a run directory together with a
//! `run.json` manifest.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::{save_checkpoint, GradCheckOptions};
use crate::decoder::DecoderConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::graph::{EntityGraph, NodeId};
use crate::model::{ModelConfig, RelModel, CHECKPOINT_FILE};
use crate::pretrain::{pretrain, MaskMode, PretrainConfig};
use crate::prompt::{denormalize, render_task_context, serialize_document, GraphPrompt};
use crate::sampler::{sample_subgraph, SamplerConfig, Strategy};
use crate::store::{build_key_index, load_database, parse_timestamp, Database, KeyIndex, LoadOptions, Timestamp};
use crate::synth::{generate, SynthConfig};
use crate::task::{Example, Split, TaskManifest};
use crate::train::{evaluate, pipeline_grad_check, train, TaskRun, TrainConfig};

pub const RUN_MANIFEST: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.jsonl";

/// Every tunable of a run. Defaults are sized for a single CPU core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                encoder: EncoderConfig { layers: 2, d_g: 32, d_col: 8, d_l: 32, dropout: 0.0, ..Default::default() },
                decoder: DecoderConfig { d_model: 32, layers: 2, heads: 4, context: 256, ..Default::default() },
                sampler: SamplerConfig { fanouts: vec![16, 4], strategy: Strategy::Last, ..Default::default() },
                ..Default::default()
            },
            train: TrainConfig {
                epochs: 10,
                batch_size: 32,
                lr: 3e-3,
                eval_every: 25,
                max_train: Some(2000),
                max_eval: Some(500),
                ..Default::default()
            },
            pretrain: PretrainConfig {
                epochs: 3,
                batch_size: 16,
                lr: 3e-3,
                max_docs: Some(400),
                dropout: false,
                ..Default::default()
            },
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "relprompt", version, about = "Relational databases as graph prompts for a small causal decoder")]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Run directory (default: `runs/<subcommand>`; for `synth`, the data directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON file merged over the default configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration field, e.g. `--set train.lr=0.01`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic users/items/events benchmark.
    Synth(SynthArgs),
    /// Load a database and report entity-graph statistics.
    BuildGraph(DataArgs),
    /// Sample a temporal subgraph around one entity.
    Sample(SampleArgs),
    /// Show the task text, denormalized document and prompt layout of one entity.
    DumpPrompt(PromptArgs),
    /// Masked-attribute pretraining.
    Pretrain(PretrainArgs),
    /// Fine-tune on a task.
    Train(TrainArgs),
    /// Evaluate a trained model on one split.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of the full pipeline.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// churn, driver-dnf-like or tiny.
    #[arg(long, default_value = "churn")]
    pub preset: String,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub events: Option<usize>,
    #[arg(long)]
    pub positive_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory with `manifest.json` and the table CSVs.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct EntityArgs {
    /// Table of the seed entity (default: the first table).
    #[arg(long)]
    pub table: Option<String>,
    /// Primary key of the seed entity (default: the table's first row).
    #[arg(long)]
    pub key: Option<String>,
    /// Seed time as epoch seconds or a date (default: the latest entity time).
    #[arg(long)]
    pub time: Option<String>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub entity: EntityArgs,
    /// Comma-separated per-hop fanouts.
    #[arg(long, value_delimiter = ',')]
    pub fanouts: Option<Vec<usize>>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Admit only neighbors strictly earlier than the seed time.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub entity: EntityArgs,
    /// Task name under `<data>/tasks/` or a manifest path.
    #[arg(long)]
    pub task: Option<String>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub p_mask: Option<f64>,
    #[arg(long)]
    pub mode: Option<MaskMode>,
    #[arg(long)]
    pub max_docs: Option<usize>,
    /// Also update decoder weights.
    #[arg(long)]
    pub train_decoder: bool,
    /// Documents are sampled at this task's validation cutoff.
    #[arg(long)]
    pub task: Option<String>,
    /// Start from a saved model directory.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub task: String,
    /// Start from a saved model directory (e.g. a pretraining run).
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_train: Option<usize>,
    #[arg(long)]
    pub n_inc: Option<usize>,
    /// Keep the graph encoder at its initial weights.
    #[arg(long)]
    pub freeze_encoder: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub task: String,
    /// Saved model directory.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: String,
    /// Evaluate without fine-tuning; classification only.
    #[arg(long)]
    pub zero_shot: bool,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Fail when the maximum relative error exceeds this.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Use this database instead of a generated one (requires --task).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    /// Target subgraph size of the checked example.
    #[arg(long, default_value_t = 20)]
    pub nodes: usize,
    #[arg(long, default_value_t = 24)]
    pub coords_per_param: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Run(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Run(e.into())
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
/// Errors are written to `stderr` as one JSON object.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = writeln!(stderr, "{}", serde_json::json!({ "error": "usage", "message": text.trim_end() }));
            }
            return code;
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &args, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let kind = if matches!(e, CliError::Usage(_)) { "usage" } else { "runtime" };
            let _ = writeln!(stderr, "{}", serde_json::json!({ "error": kind, "message": e.to_string() }));
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, args: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} threads: {e}", cli.threads)))?;
    let mut cfg = resolve_config(cli)?;
    apply_command_flags(&cli.command, &mut cfg)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&cfg).map_err(Error::from)?)?;
    let name = command_name(&cli.command);
    let run_dir = cli.out.clone().unwrap_or_else(|| match cli.command {
        Command::Synth(_) => PathBuf::from("data/synth"),
        _ => PathBuf::from("runs").join(name),
    });
    std::fs::create_dir_all(&run_dir)?;
    let manifest = serde_json::json!({ "command": name, "args": args, "seed": cli.seed, "threads": cli.threads, "config": cfg });
    std::fs::write(run_dir.join(RUN_MANIFEST), serde_json::to_string_pretty(&manifest).map_err(Error::from)? + "\n")?;
    let mut buf: Vec<u8> = Vec::new();
    let result = pool.install(|| dispatch(cli, &cfg, &run_dir, &mut buf));
    out.write_all(&buf)?;
    result
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::BuildGraph(_) => "build-graph",
        Command::Sample(_) => "sample",
        Command::DumpPrompt(_) => "dump-prompt",
        Command::Pretrain(_) => "pretrain",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::GradCheck(_) => "grad-check",
    }
}

/// Defaults, then `--config`, then `--set`, then `--seed`.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut value = serde_json::to_value(RunConfig::default()).map_err(Error::from)?;
    let schema = value.clone();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)?;
        let overlay: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        merge(&mut value, &overlay, &schema, "")?;
    }
    for item in &cli.set {
        let (key, raw) = item.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
        let parsed: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut overlay = parsed;
        for part in key.split('.').rev() {
            overlay = serde_json::json!({ part: overlay });
        }
        merge(&mut value, &overlay, &schema, "")?;
    }
    let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
    cfg.train.seed = cli.seed;
    cfg.pretrain.seed = cli.seed;
    cfg.synth.seed = cli.seed;
    cfg.model.sampler.rng_seed = cli.seed;
    cfg.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.pretrain.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Deep-merge `overlay` into `base`, rejecting keys absent from `schema`.
fn merge(base: &mut Value, overlay: &Value, schema: &Value, path: &str) -> Result<(), CliError> {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let s = schema.get(k).ok_or_else(|| CliError::Usage(format!("unknown configuration key `{sub}`")))?;
                let slot = b.get_mut(k).expect("base follows schema");
                if s.is_object() && v.is_object() {
                    merge(slot, v, s, &sub)?;
                } else {
                    *slot = v.clone();
                }
            }
            Ok(())
        }
        (b, o) => {
            *b = o.clone();
            Ok(())
        }
    }
}

fn apply_command_flags(c: &Command, cfg: &mut RunConfig) -> Result<(), CliError> {
    match c {
        Command::Synth(a) => {
            let seed = cfg.synth.seed;
            cfg.synth = SynthConfig::preset(&a.preset).map_err(|e| CliError::Usage(e.to_string()))?;
            cfg.synth.seed = seed;
            if let Some(u) = a.users {
                cfg.synth.users = u;
            }
            if let Some(e) = a.events {
                cfg.synth.events = e;
            }
            if let Some(r) = a.positive_rate {
                cfg.synth.positive_rate = r;
            }
            cfg.synth.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Command::Sample(a) => {
            if let Some(f) = &a.fanouts {
                cfg.model.sampler.fanouts = f.clone();
            }
            if let Some(s) = a.strategy {
                cfg.model.sampler.strategy = s;
            }
            cfg.model.sampler.strict_time |= a.strict;
        }
        Command::Pretrain(a) => {
            let p = &mut cfg.pretrain;
            if let Some(e) = a.epochs {
                p.epochs = e;
            }
            if let Some(x) = a.p_mask {
                p.p_mask = x;
            }
            if let Some(m) = a.mode {
                p.mode = m;
            }
            if a.max_docs.is_some() {
                p.max_docs = a.max_docs;
            }
            cfg.model.decoder.trainable |= a.train_decoder;
            p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Command::Train(a) => {
            let t = &mut cfg.train;
            if let Some(e) = a.epochs {
                t.epochs = e;
            }
            if let Some(x) = a.lr {
                t.lr = x;
            }
            if let Some(b) = a.batch_size {
                t.batch_size = b;
            }
            if a.max_train.is_some() {
                t.max_train = a.max_train;
            }
            if let Some(n) = a.n_inc {
                t.n_inc = n;
            }
            t.freeze_encoder |= a.freeze_encoder;
            t.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Command::BuildGraph(_) | Command::DumpPrompt(_) | Command::Eval(_) | Command::GradCheck(_) => {}
    }
    Ok(())
}

struct Loaded {
    db: Database,
    index: KeyIndex,
    graph: EntityGraph,
}

fn load(data: &Path) -> Result<Loaded> {
    let db = load_database(&data.join("manifest.json"), data, LoadOptions::default())?;
    let index = build_key_index(&db);
    let graph = EntityGraph::build(&db, &index);
    Ok(Loaded { db, index, graph })
}

/// A task given by name resolves to `<data>/tasks/<name>.json`.
fn load_task(data: &Path, task: &str, l: &Loaded) -> Result<(TaskManifest, Vec<Example>)> {
    let direct = PathBuf::from(task);
    let path = if direct.is_file() { direct } else { data.join("tasks").join(format!("{task}.json")) };
    let manifest = TaskManifest::load(&path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let examples = manifest.examples(&l.db, &l.index, &base)?;
    Ok((manifest, examples))
}

fn pick_entity(l: &Loaded, a: &EntityArgs) -> Result<(NodeId, Timestamp), CliError> {
    let table = match &a.table {
        Some(t) => l.db.table_id(t).map_err(|e| CliError::Usage(e.to_string()))?,
        None => crate::store::TableId(0),
    };
    let row = match &a.key {
        Some(k) => l.index.row_of(table, k).ok_or_else(|| CliError::Usage(format!("no entity `{k}`")))?,
        None if l.db.table(table).is_empty() => return Err(CliError::Usage("table is empty".into())),
        None => 0,
    };
    let t = match &a.time {
        Some(s) => parse_timestamp(s).ok_or_else(|| CliError::Usage(format!("cannot parse time `{s}`")))?,
        None => l.db.max_time().unwrap_or(Timestamp::POS_INF),
    };
    Ok((NodeId::new(table, row), t))
}

fn load_model(dir: &Path, graph: &EntityGraph) -> Result<(RelModel, crate::autodiff::ParamStore), CliError> {
    if !dir.join(CHECKPOINT_FILE).is_file() {
        return Err(CliError::Usage(format!("no saved model in {}", dir.display())));
    }
    Ok(RelModel::load(dir, graph)?)
}

fn dispatch(cli: &Cli, cfg: &RunConfig, run_dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(_) => {
            let bench = generate(&cfg.synth)?;
            bench.write(run_dir)?;
            for split in [Split::Train, Split::Val, Split::Test] {
                let n = bench.churn.split(&bench.churn_examples, split).len();
                writeln!(out, "{split}: {n} churn examples, positive rate {:.4}", bench.positive_rate(split))?;
            }
            writeln!(out, "wrote {}", run_dir.display())?;
        }
        Command::BuildGraph(a) => {
            let l = load(&a.data)?;
            let stats = l.graph.stats();
            let text = serde_json::to_string_pretty(&stats).map_err(Error::from)?;
            writeln!(out, "{text}")?;
            writeln!(out, "nodes={} edges={} dangling={}", l.graph.num_nodes(), l.graph.num_edges(), l.db.report.dangling.len())?;
            std::fs::write(run_dir.join("graph.json"), text + "\n")?;
        }
        Command::Sample(a) => {
            let l = load(&a.data.data)?;
            let (v, t) = pick_entity(&l, &a.entity)?;
            let sub = sample_subgraph(&l.graph, v, t, &cfg.model.sampler).map_err(Error::from)?;
            let summary = sub.summary(&l.graph);
            writeln!(out, "{summary}")?;
            std::fs::write(run_dir.join("subgraph.txt"), summary + "\n")?;
        }
        Command::DumpPrompt(a) => {
            let l = load(&a.data.data)?;
            let (v, t) = pick_entity(&l, &a.entity)?;
            if let Some(task) = &a.task {
                let (manifest, _) = load_task(&a.data.data, task, &l)?;
                let ctx = render_task_context(&manifest).map_err(Error::from)?;
                writeln!(out, "task: {}\nquestion: {}", ctx.task_text, ctx.question_text)?;
            }
            let tree = denormalize(&l.graph, v, t, &cfg.model.denorm).map_err(Error::from)?;
            let prompt = GraphPrompt::build(&tree, cfg.model.include_pooled);
            let mut text = format!("document: {}\nbrackets: {}\n", serialize_document(&tree, &l.db), prompt.brackets());
            for line in prompt.listing(&l.db) {
                text.push_str(&line);
                text.push('\n');
            }
            write!(out, "{text}")?;
            std::fs::write(run_dir.join("prompt.txt"), text)?;
        }
        Command::Pretrain(a) => {
            let l = load(&a.data.data)?;
            let mut pcfg = cfg.pretrain.clone();
            let fit_cutoff = match &a.task {
                Some(task) => {
                    let (manifest, _) = load_task(&a.data.data, task, &l)?;
                    pcfg.cutoff = Some(manifest.val_cutoff);
                    manifest.val_cutoff
                }
                None => pcfg.cutoff.or_else(|| l.db.max_time()).unwrap_or(Timestamp::POS_INF),
            };
            let (model, mut store) = match &a.init {
                Some(dir) => load_model(dir, &l.graph)?,
                None => {
                    let model = RelModel::new(cfg.model.clone(), &l.db, &l.graph, fit_cutoff)?;
                    let store = model.init_params(cli.seed)?;
                    (model, store)
                }
            };
            store.set_frozen_prefix("dec.", !cfg.model.decoder.trainable);
            let outcome = pretrain(&model, store, &l.db, &l.graph, &pcfg)?;
            outcome.log.write(&run_dir.join(METRICS_FILE))?;
            model.save(run_dir, Some(&outcome.store))?;
            let s = outcome.final_stats;
            writeln!(
                out,
                "documents={} masked_entities={} loss={:.6} token_accuracy={:.4} value_accuracy={:.4}",
                outcome.docs, outcome.masked_entities, s.loss, s.token_accuracy, s.value_accuracy
            )?;
        }
        Command::Train(a) => {
            let l = load(&a.data.data)?;
            let (task, examples) = load_task(&a.data.data, &a.task, &l)?;
            let (model, mut store) = match &a.init {
                Some(dir) => load_model(dir, &l.graph)?,
                None => {
                    let model = RelModel::new(cfg.model.clone(), &l.db, &l.graph, task.val_cutoff)?;
                    let store = model.init_params(cli.seed)?;
                    (model, store)
                }
            };
            store.set_frozen_prefix("dec.", !cfg.model.decoder.trainable);
            let outcome = train(&model, store, &l.db, &l.graph, &task, &examples, &cfg.train)?;
            outcome.log.write(&run_dir.join(METRICS_FILE))?;
            model.save(run_dir, Some(&outcome.best))?;
            save_checkpoint(&outcome.last, &run_dir.join("last.bin")).map_err(Error::from)?;
            for r in &outcome.log.rows {
                writeln!(out, "step {:>5} {:<5} {:<5} {:.6} lr={:.3e}", r.step, r.split, r.metric_name, r.value, r.lr)?;
            }
            writeln!(out, "best {:.6} at step {}; checkpoint {}", outcome.best_metric, outcome.best_step, run_dir.join(CHECKPOINT_FILE).display())?;
        }
        Command::Eval(a) => {
            let l = load(&a.data.data)?;
            let (task, examples) = load_task(&a.data.data, &a.task, &l)?;
            let split: Split = a.split.parse().map_err(|e: crate::task::TaskError| CliError::Usage(e.to_string()))?;
            let (model, store) = load_model(&a.model, &l.graph)?;
            let r = evaluate(&model, &store, &l.db, &l.graph, &task, &examples, split, &cfg.train, a.zero_shot)?;
            let summary = serde_json::json!({ "split": r.split, "metric": r.metric_name, "value": r.value, "loss": r.loss, "n": r.n });
            writeln!(out, "{summary}")?;
            std::fs::write(run_dir.join("eval.json"), serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n")?;
        }
        Command::GradCheck(a) => {
            let report = grad_check(cli, cfg, a)?;
            writeln!(out, "{}", report.0)?;
            std::fs::write(run_dir.join("grad_check.txt"), report.0 + "\n")?;
            if report.1.is_nan() || report.1 > a.tol {
                return Err(CliError::Run(Error::Config(format!("max relative error {:.3e} exceeds tolerance {:.3e}", report.1, a.tol))));
            }
        }
    }
    Ok(())
}

fn grad_check(cli: &Cli, cfg: &RunConfig, a: &GradCheckArgs) -> Result<(String, f64), CliError> {
    let (l, task, examples) = match (&a.data, &a.task) {
        (Some(data), Some(task)) => {
            let l = load(data)?;
            let (m, ex) = load_task(data, task, &l)?;
            (l, m, ex)
        }
        (None, None) => {
            let bench = generate(&SynthConfig { seed: cli.seed, ..SynthConfig::preset("tiny").map_err(CliError::Run)? })?;
            let index = build_key_index(&bench.db);
            let graph = EntityGraph::build(&bench.db, &index);
            (Loaded { db: bench.db, index, graph }, bench.churn, bench.churn_examples)
        }
        _ => return Err(CliError::Usage("--data and --task go together".into())),
    };
    let model = RelModel::new(cfg.model.clone(), &l.db, &l.graph, task.val_cutoff)?;
    let mut store = model.init_params(cli.seed)?;
    let train_ex: Vec<Example> = task.split(&examples, Split::Train).into_iter().copied().collect();
    let run = TaskRun::new(&model, &l.db, &l.graph, &task, &train_ex, 0, cli.seed)?;
    let mut best: Option<(usize, Example)> = None;
    for ex in train_ex.iter().take(400) {
        let n = model.document(&l.graph, ex.entity, ex.seed_time, cli.seed)?.sub.len();
        let gap = n.abs_diff(a.nodes);
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, *ex));
        }
        if gap == 0 {
            break;
        }
    }
    let (_, ex) = best.ok_or_else(|| CliError::Run(Error::Config("no training examples".into())))?;
    let nodes = model.document(&l.graph, ex.entity, ex.seed_time, cli.seed)?.sub.len();
    let opts = GradCheckOptions { max_coords_per_param: a.coords_per_param, seed: cli.seed, ..Default::default() };
    let report = pipeline_grad_check(&run, &mut store, &ex, &cfg.train, opts)?;
    let worst = report.worst.as_ref().map_or(String::from("-"), |w| format!("{}[{}] analytic={:.6e} numeric={:.6e}", w.0, w.1, w.2, w.3));
    let text = format!(
        "subgraph_nodes={nodes} coords={} max_rel_error={:.3e} tol={:.1e} worst={worst} {}",
        report.coords_checked,
        report.max_rel_error,
        a.tol,
        if report.max_rel_error <= a.tol { "PASS" } else { "FAIL" }
    );
    Ok((text, report.max_rel_error))
}
