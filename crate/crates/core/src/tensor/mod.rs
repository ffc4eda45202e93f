//! Dense matrix primitives and exact layer gradients.

mod layers;
mod matrix;
mod tape;

pub use layers::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, dropout, dropout_backward, linear_backward, linear_forward,
    relu, relu_backward, softmax, softmax_cross_entropy, BatchNormState, BnCache, BnGrads, Linear, LinearGrads, Mode,
    DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM,
};
pub use matrix::Matrix;
pub use tape::{GradTape, TapeEntry};
