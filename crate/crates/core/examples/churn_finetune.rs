//! Fine-tune on the synthetic churn task with a frozen decoder, then score
//! the held-out test split with the best validation checkpoint.

use relprompt::decoder::DecoderConfig;
use relprompt::encoder::EncoderConfig;
use relprompt::graph::EntityGraph;
use relprompt::model::{ModelConfig, RelModel};
use relprompt::sampler::{SamplerConfig, Strategy};
use relprompt::store::build_key_index;
use relprompt::synth::{generate, SynthConfig};
use relprompt::task::Split;
use relprompt::train::{evaluate, train, TrainConfig};

fn main() -> relprompt::Result<()> {
    let freeze_encoder = std::env::args().any(|a| a == "--freeze-encoder");
    let bench = generate(&SynthConfig::preset("churn")?)?;
    let graph = EntityGraph::build(&bench.db, &build_key_index(&bench.db));
    let cfg = ModelConfig {
        encoder: EncoderConfig { layers: 2, d_g: 32, d_col: 8, d_l: 32, dropout: 0.0, ..Default::default() },
        decoder: DecoderConfig { d_model: 32, layers: 2, heads: 4, context: 256, ..Default::default() },
        sampler: SamplerConfig { fanouts: vec![16, 4], strategy: Strategy::Last, ..Default::default() },
        ..Default::default()
    };
    let model = RelModel::new(cfg, &bench.db, &graph, bench.churn.val_cutoff)?;
    let store = model.init_params(0)?;
    let tcfg = TrainConfig {
        epochs: 10,
        lr: 3e-3,
        eval_every: 25,
        max_train: Some(2000),
        max_eval: Some(500),
        freeze_encoder,
        ..Default::default()
    };
    let out = train(&model, store, &bench.db, &graph, &bench.churn, &bench.churn_examples, &tcfg)?;
    for r in out.log.rows.iter().filter(|r| r.split == "val") {
        println!("step {:>5}  val auroc {:.4}", r.step, r.value);
    }
    println!("best val auroc {:.4} at step {}", out.best_metric, out.best_step);
    let test = evaluate(&model, &out.best, &bench.db, &graph, &bench.churn, &bench.churn_examples, Split::Test, &tcfg, false)?;
    println!("test auroc {:.4} on {} examples", test.value, test.n);
    Ok(())
}
