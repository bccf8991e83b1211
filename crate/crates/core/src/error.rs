use crate::autodiff::AutodiffError;
use crate::decoder::DecoderError;
use crate::encoder::EncoderError;
use crate::graph::GraphError;
use crate::prompt::PromptError;
use crate::store::StoreError;
use crate::task::TaskError;
use crate::train::MetricError;

/// Errors surfaced by the end-to-end pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no masked entities to train on")]
    EmptyMaskSet,
    #[error("{0}")]
    UnsupportedMode(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
