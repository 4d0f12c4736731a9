//! Dense tensors, a gradient tape, attention, and finite-difference checks.

pub mod attention;
pub mod gradcheck;
pub mod graph;
pub mod tensor;

pub use attention::{maybe_dropout, multi_head_attention, AttentionWeights, Dropout};
pub use gradcheck::{gradcheck, gradcheck_coords, no_exclusion, GradcheckReport};
pub use graph::{Gradients, Graph, Var};
pub use tensor::{
    layer_norm, linear, masked_softmax, matmul, matmul_nt, sigmoid, sigmoid_scalar,
    softmax_lastdim, Real, Tensor,
};
