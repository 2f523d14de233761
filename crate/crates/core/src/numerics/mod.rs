//! Minimal dense-tensor arithmetic with reverse-mode differentiation,
//! sized for the encoders, the fusion transformer, and the losses.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, FD_STEP};
pub use tape::{Gradients, Tape, VarId};
pub use tensor::{
    add, cosine_similarity_matrix, layer_norm, matmul, scale, softmax_rows, transpose, Tensor,
};
