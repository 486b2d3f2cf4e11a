//! Dense `f64` tensors with a tape-based reverse-mode differentiation core.
//!
//! Provides exactly the operators a small convolutional Q-network needs:
//! stride-1 convolution (valid or wrap-around padding), 2-D batch norm,
//! leaky ReLU, affine layers, dueling value/advantage aggregation, action
//! gathering, and MSE / Huber losses. Gradients are verified against central
//! finite differences by [`gradcheck`].

pub mod checkpoint;
mod error;
mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod tape;
mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use layers::{BatchStats, Layer, LayerSpec, SeqForward, Sequential};
pub use optim::{OptimState, OptimizerKind};
pub use tape::{huber, huber_grad, BatchNormMode, Gradients, Padding, Tape, Var};
pub use tensor::Tensor;
