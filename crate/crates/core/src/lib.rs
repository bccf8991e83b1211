//! Relational deep learning with graph prompts.
//!
//! A relational database is loaded into a [`store::Database`], turned into a
//! typed temporal [`graph::EntityGraph`], and sampled around a seed entity at
//! a seed time. A heterogeneous GNN ([`encoder`]) embeds the sample; the
//! embeddings are spliced into a token prompt ([`prompt`]) consumed by a small
//! causal decoder ([`decoder`]). [`pretrain`] and [`train`] fit the pipeline;
//! [`cli`] drives it from the command line.

pub mod autodiff;
pub mod cli;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod model;
pub mod pretrain;
pub mod prompt;
pub mod sampler;
pub mod store;
pub mod synth;
pub mod task;
pub mod train;

pub use error::{Error, Result};
