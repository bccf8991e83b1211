//! Finite-difference check of the whole pipeline (sampler, encoder, prompt,
//! decoder, focal loss) on one training example.

use relprompt::autodiff::GradCheckOptions;
use relprompt::graph::EntityGraph;
use relprompt::model::{ModelConfig, RelModel};
use relprompt::store::build_key_index;
use relprompt::synth::{generate, SynthConfig};
use relprompt::task::{Example, Split};
use relprompt::train::{pipeline_grad_check, TaskRun, TrainConfig};

fn main() -> relprompt::Result<()> {
    let bench = generate(&SynthConfig::preset("tiny")?)?;
    let graph = EntityGraph::build(&bench.db, &build_key_index(&bench.db));
    let model = RelModel::new(ModelConfig::default(), &bench.db, &graph, bench.churn.val_cutoff)?;
    let mut store = model.init_params(1)?;
    let train: Vec<Example> = bench.churn.split(&bench.churn_examples, Split::Train).into_iter().copied().collect();
    let run = TaskRun::new(&model, &bench.db, &graph, &bench.churn, &train, 0, 1)?;

    let opts = GradCheckOptions { max_coords_per_param: 8, ..Default::default() };
    let report = pipeline_grad_check(&run, &mut store, &train[0], &TrainConfig::default(), opts)?;
    println!("{} coordinates, max relative error {:.3e}", report.coords_checked, report.max_rel_error);
    if let Some(w) = &report.worst {
        println!("worst: {}[{}] analytic {:.6e} numeric {:.6e}", w.0, w.1, w.2, w.3);
    }
    assert!(report.max_rel_error < 1e-4);
    Ok(())
}
