//! Minimal reverse-mode automatic differentiation for small 2-D
//! convolutional networks in `f64`.
//!
//! The engine is deterministic: every reduction runs in a fixed order, so the
//! same inputs and parameters always produce bit-identical values and
//! gradients.

mod container;
mod graph;
mod kernels;
mod optim;
mod params;
mod tensor;

pub use container::{Container, Section, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use graph::{sigmoid, softplus, Grads, Graph, Var};
pub use kernels::{half_len, ConvGeom};
pub use optim::Adam;
pub use params::{kaiming_normal, ParamEntry, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("container format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, NnError>;
