//! Score the churn task without fine-tuning, with and without labelled
//! in-context examples in the prompt.

use relprompt::graph::EntityGraph;
use relprompt::model::{ModelConfig, RelModel};
use relprompt::store::build_key_index;
use relprompt::synth::{generate, SynthConfig};
use relprompt::task::Split;
use relprompt::train::{evaluate, TrainConfig};

fn main() -> relprompt::Result<()> {
    let bench = generate(&SynthConfig::preset("tiny")?)?;
    let graph = EntityGraph::build(&bench.db, &build_key_index(&bench.db));
    let model = RelModel::new(ModelConfig::default(), &bench.db, &graph, bench.churn.val_cutoff)?;
    let store = model.init_params(0)?;
    for n_inc in [0, 1, 2] {
        let cfg = TrainConfig { n_inc, max_eval: Some(120), ..Default::default() };
        let r = evaluate(&model, &store, &bench.db, &graph, &bench.churn, &bench.churn_examples, Split::Val, &cfg, true)?;
        println!("in-context examples per class {n_inc}: val auroc {:.4}, loss {:.4}", r.value, r.loss);
    }
    let count = evaluate(&model, &store, &bench.db, &graph, &bench.count, &bench.count_examples, Split::Val, &TrainConfig::default(), true);
    println!("zero-shot regression: {}", count.map(|_| "ran".to_string()).unwrap_or_else(|e| e.to_string()));
    Ok(())
}
