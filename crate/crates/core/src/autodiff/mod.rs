//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Primitives: add, sub, mul, div, scale, relu, sigmoid, exp, ln, softplus,
//! sin, cos, matmul, sum, sum_axis, concat, slice, reshape, row gather,
//! bilinear gather and 3x3 convolution. Everything else in the crate is
//! composed from these.

pub mod gradcheck;
mod graph;
mod tensor;

pub use graph::{sigmoid, softplus, Gradients, Graph, Var};
pub use tensor::{broadcast_shape, Tensor};
