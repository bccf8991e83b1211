//! Masked-attribute pretraining on a single small table until the model
//! reproduces the masked values exactly.

use relprompt::decoder::DecoderConfig;
use relprompt::encoder::EncoderConfig;
use relprompt::graph::EntityGraph;
use relprompt::model::{ModelConfig, RelModel};
use relprompt::pretrain::{build_documents, pretrain_on, PretrainConfig};
use relprompt::store::{build_key_index, Timestamp};
use relprompt::synth::people_db;

fn main() -> relprompt::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let db = people_db(50, 1);
    let graph = EntityGraph::build(&db, &build_key_index(&db));
    let cfg = ModelConfig {
        encoder: EncoderConfig { layers: 2, d_g: 32, d_col: 8, d_l: 32, dropout: 0.0, ..Default::default() },
        decoder: DecoderConfig { d_model: 32, layers: 2, heads: 4, context: 128, trainable: true, ..Default::default() },
        ..Default::default()
    };
    let model = RelModel::new(cfg, &db, &graph, Timestamp::POS_INF)?;
    let store = model.init_params(0)?;

    let pcfg = PretrainConfig { epochs, batch_size: 64, lr: 3e-3, dropout: false, eval_every: 50, ..Default::default() };
    let docs = build_documents(&model, &db, &graph, &pcfg)?;
    println!("{} documents, {} masked entities", docs.len(), docs.iter().map(|d| d.plan.masked.len()).sum::<usize>());
    let out = pretrain_on(&model, store, &db, &docs, &pcfg)?;
    for r in out.log.rows.iter().filter(|r| r.metric_name == "loss") {
        println!("step {:>5}  loss {:.5}", r.step, r.value);
    }
    let s = out.final_stats;
    println!("token accuracy {:.4}, value accuracy {:.4}", s.token_accuracy, s.value_accuracy);
    Ok(())
}
