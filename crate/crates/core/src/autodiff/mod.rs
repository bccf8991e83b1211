//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records operations against a read-only [`ParamStore`];
//! [`Graph::backward`] returns [`Gradients`] for every non-frozen parameter
//! the loss depends on. Gradients are applied by the optimizers in
//! [`crate::train`].

mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Var};
pub use params::{Gradients, MomentState, Param, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: [usize; 2], right: [usize; 2] },
    #[error("loss must be a 1x1 scalar, got {0:?}")]
    NonScalarLoss([usize; 2]),
    #[error("loss is not finite: {0}")]
    NonFiniteLoss(f64),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
