//! Dense matrices, primitive functions and the reverse-mode tape.

pub mod finite_diff;
pub mod matrix;
pub mod primitives;
pub mod tape;

pub use matrix::Matrix;
pub use primitives::{
    cosine_distance, gelu, layer_norm, sigmoid, softmax_rows, CosineDistance, LAYER_NORM_EPS,
};
pub use tape::{FaultInjection, Gradients, OpKind, Tape, Var};
