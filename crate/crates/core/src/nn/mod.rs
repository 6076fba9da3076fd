//! Minimal f64 neural-network toolkit: tensors, a tape autodiff graph,
//! parameter storage and Adam.

pub mod container;
pub mod graph;
pub mod kernels;
pub mod params;
pub mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use params::{Adam, AdamConfig, Bound, ParamId, ParamStore};
pub use tensor::Tensor;
