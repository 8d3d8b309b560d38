//! Minimal differentiable tensor core: exactly the operations the model needs.

pub mod gradcheck;
mod graph;
mod param;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use param::{ParamId, ParamRole, ParamStore, Parameter};
pub use tensor::{gelu_scalar, matmul, softmax_rows, transpose, DType, Scalar, Tensor};


pub const DEFAULT_LAYER_NORM_EPS: f64 = 1e-5;
