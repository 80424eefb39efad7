//! Reverse-mode autodiff tensors and the neural-network primitives built on
//! them: N-D valid convolution, transposed convolution, dense and GRU layers,
//! and inverted dropout. Computation graphs are built eagerly per forward
//! pass; parameters live outside graphs as plain arrays and re-enter each
//! step as fresh leaves.

pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod nd;
pub mod tensor;

pub use conv::{conv_nd, conv_transpose_nd};
pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_check, GradCheckReport, REL_ERR_FLOOR};
pub use layers::{
    dense_forward, dropout_forward, glorot_uniform, gru_seq2seq_forward, LayerHyper, LayerKind,
    LayerParams,
};
pub use nd::NdArray;
pub use tensor::Tensor;
