//! Build the entity graph and sample a temporal subgraph with each
//! strategy; every sampled node is timestamped no later than the seed time.

use relprompt::graph::{EntityGraph, NodeId};
use relprompt::sampler::{sample_subgraph, SamplerConfig, Strategy};
use relprompt::store::build_key_index;
use relprompt::synth::{generate, SynthConfig};

fn main() -> relprompt::Result<()> {
    let bench = generate(&SynthConfig::preset("tiny")?)?;
    let graph = EntityGraph::build(&bench.db, &build_key_index(&bench.db));
    println!("{} nodes, {} edges", graph.num_nodes(), graph.num_edges());

    let ex = bench.churn_examples[bench.churn_examples.len() / 2];
    for strategy in [Strategy::Uniform, Strategy::Last] {
        let cfg = SamplerConfig { fanouts: vec![4, 2], strategy, ..Default::default() };
        let sub = sample_subgraph(&graph, ex.entity, ex.seed_time, &cfg)?;
        let latest = sub.nodes.iter().map(|&v: &NodeId| graph.time(v)).max().expect("seed is present");
        assert!(latest <= ex.seed_time);
        println!("\n{strategy:?}: latest node time {} <= seed time {}", latest.0, ex.seed_time.0);
        println!("{}", sub.summary(&graph));
    }
    Ok(())
}
