//! Minimal reverse-mode compute for the networks described by
//! [`NetworkSpec`](crate::netspec::NetworkSpec): conv, 2×2 max pool,
//! global average pool, dense layers and 1×1 skip projections, trained with
//! softmax cross-entropy and SGD.

mod gradcheck;
mod network;
mod ops;
mod scalar;
mod train;

pub use gradcheck::{relative_error, grad_check, GradCheckEntry, GradCheckReport};
pub use network::{
    fill_he_uniform, he_uniform_bound, ConvParams, DenseParams, LayerParams, NetworkWeights, Trace,
};
pub use ops::{argmax_rows, conv_output_hw, softmax_cross_entropy, Tensor};
pub use scalar::Scalar;
pub use train::{correct_count, evaluate, train, train_iterations, train_step, Sgd, TrainBudget};
