//! Dense `f64` tensors, reverse-mode differentiation and small layers.

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod params;
pub mod tensor;

pub use graph::{CustomOp, Gradients, Graph, Unary, Var};
pub use nn::{LayerNorm, Linear, Mlp};
pub use params::{ParamId, ParamStore};
pub use tensor::{gelu, layer_norm, matmul, sigmoid, softmax, softplus, Tensor};
