//! Generate the synthetic churn benchmark, write it to disk, load it back
//! and report per-split label balance.
//!
//! cargo run --release --example synth_benchmark -- [preset] [out-dir]

use relprompt::store::{build_key_index, load_database, LoadOptions};
use relprompt::synth::{generate, SynthConfig};
use relprompt::task::{Split, TaskManifest};

fn main() -> relprompt::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "driver-dnf-like".into());
    let dir = args.next().map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("relprompt-synth"));

    let bench = generate(&SynthConfig::preset(&preset)?)?;
    bench.write(&dir)?;
    println!("wrote {preset} to {}", dir.display());

    let db = load_database(&dir.join("manifest.json"), &dir, LoadOptions::default())?;
    for t in &db.tables {
        println!("  {:<8} {:>6} rows, {} attribute columns", t.name(), t.len(), t.attribute_columns().len());
    }
    let index = build_key_index(&db);
    for name in ["churn", "event-count"] {
        let task = TaskManifest::load(&dir.join("tasks").join(format!("{name}.json")))?;
        let examples = task.examples(&db, &index, &dir.join("tasks"))?;
        for split in [Split::Train, Split::Val, Split::Test] {
            let ex = task.split(&examples, split);
            let mean = ex.iter().map(|e| e.label).sum::<f64>() / ex.len() as f64;
            println!("  {name:<12} {:<5} n={:<6} mean label {mean:.4}", split.to_string(), ex.len());
        }
    }
    Ok(())
}
