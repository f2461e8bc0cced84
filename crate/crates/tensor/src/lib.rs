//! Dense 2-D tensors with a tape-based reverse-mode autodiff, generic over
//! `f32` and `f64`.

mod graph;
pub mod layers;
mod optim;
mod params;
mod scalar;
mod tensor;

pub use graph::{Grads, Graph, Var};
pub use optim::AdamW;
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter `{0}` registered twice")]
    DuplicateParam(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Scalar helpers shared with callers that work outside the graph.
pub mod math {
    pub use crate::graph::{log_sigmoid, sigmoid};
}
