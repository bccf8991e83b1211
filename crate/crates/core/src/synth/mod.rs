//! Synthetic relational databases: random schemas for property tests and a
//! users/items/events benchmark with history-defined labels.

mod bench;
mod random;

pub use bench::{
    derive_labels, generate, people_db, users_table, SynthBench, SynthConfig, CHURN_TASK, COUNT_TASK, EVENT_KINDS,
};
pub use random::{random_database, RandomDbConfig};
