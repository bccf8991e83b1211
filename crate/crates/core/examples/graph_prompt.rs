//! Turn one labelled example into its document, prompt layout and task text.

use relprompt::graph::EntityGraph;
use relprompt::model::{ModelConfig, RelModel};
use relprompt::prompt::{render_task_context, serialize_document};
use relprompt::store::build_key_index;
use relprompt::synth::{generate, SynthConfig};

fn main() -> relprompt::Result<()> {
    let bench = generate(&SynthConfig::preset("tiny")?)?;
    let graph = EntityGraph::build(&bench.db, &build_key_index(&bench.db));
    let model = RelModel::new(ModelConfig::default(), &bench.db, &graph, bench.churn.val_cutoff)?;

    let ex = bench.churn_examples[0];
    let doc = model.document(&graph, ex.entity, ex.seed_time, 0)?;
    let ctx = render_task_context(&bench.churn)?;
    println!("task:     {}", ctx.task_text);
    println!("question: {}", ctx.question_text);
    println!("label:    {}", ex.label);
    println!("\ndocument: {}", serialize_document(&doc.tree, &bench.db));
    println!("\n{} slots, {} graph vectors: {}", doc.prompt.len(), doc.prompt.vector_slots(), doc.prompt.brackets());
    for line in doc.prompt.listing(&bench.db) {
        println!("{line}");
    }
    println!("\nvocabulary: {} tokens; task text: {} tokens", model.vocab.len(), ctx.tokens().len());
    Ok(())
}
