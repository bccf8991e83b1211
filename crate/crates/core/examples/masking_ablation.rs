//! Entity-level versus cell-level masking: pretrain with each mode, then
//! fine-tune on churn with the decoder frozen and compare validation AUROC.

use relprompt::decoder::DecoderConfig;
use relprompt::encoder::EncoderConfig;
use relprompt::graph::EntityGraph;
use relprompt::model::{ModelConfig, RelModel};
use relprompt::pretrain::{pretrain, MaskMode, PretrainConfig};
use relprompt::sampler::{SamplerConfig, Strategy};
use relprompt::store::build_key_index;
use relprompt::synth::{generate, SynthConfig};
use relprompt::train::{train, TrainConfig};

fn main() -> relprompt::Result<()> {
    let seeds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3u64);
    let bench = generate(&SynthConfig::preset("churn")?)?;
    let graph = EntityGraph::build(&bench.db, &build_key_index(&bench.db));
    let cfg = ModelConfig {
        encoder: EncoderConfig { layers: 2, d_g: 32, d_col: 8, d_l: 32, dropout: 0.0, ..Default::default() },
        decoder: DecoderConfig { d_model: 32, layers: 2, heads: 4, context: 256, ..Default::default() },
        sampler: SamplerConfig { fanouts: vec![16, 4], strategy: Strategy::Last, ..Default::default() },
        ..Default::default()
    };
    let model = RelModel::new(cfg, &bench.db, &graph, bench.churn.val_cutoff)?;
    for seed in 0..seeds {
        let mut row = Vec::new();
        for mode in [MaskMode::Entity, MaskMode::Cell] {
            let mut store = model.init_params(seed)?;
            store.set_frozen_prefix("dec.", false);
            let pcfg = PretrainConfig {
                epochs: 3,
                lr: 3e-3,
                mode,
                seed,
                max_docs: Some(400),
                cutoff: Some(bench.churn.val_cutoff),
                dropout: false,
                ..Default::default()
            };
            let mut store = pretrain(&model, store, &bench.db, &graph, &pcfg)?.store;
            store.set_frozen_prefix("dec.", true);
            let tcfg = TrainConfig {
                epochs: 2,
                lr: 3e-3,
                eval_every: 25,
                max_train: Some(1000),
                max_eval: Some(500),
                seed,
                ..Default::default()
            };
            let out = train(&model, store, &bench.db, &graph, &bench.churn, &bench.churn_examples, &tcfg)?;
            row.push(out.best_metric);
        }
        println!("seed {seed}: entity {:.4}  cell {:.4}", row[0], row[1]);
    }
    Ok(())
}
