//! Dense matrices and a reverse-mode differentiation tape over them.

mod graph;
mod tensor;

pub use graph::{Axis, Graph, Reduce, SteMode, Unary, Var, LEAKY_RELU_SLOPE};
pub use tensor::Tensor;
