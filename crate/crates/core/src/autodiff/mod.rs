//! Reverse-mode differentiation over dense `f64` tensors.

mod graph;
pub mod gradcheck;
pub mod optim;
mod tensor;

pub use graph::{silu, Graph, Var, LAYER_NORM_EPS};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use tensor::Tensor;
