//! Dense f64 tensors with a tape-based autodiff [`Graph`], the handful of
//! ops a small convolution + attention segmentation network needs, and an
//! AdamW optimiser.

mod graph;
pub mod kernels;
pub mod linalg;
mod optim;
mod param;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use kernels::Padding;
pub use optim::{clip_grad_norm, AdamW};
pub use param::{ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
}
