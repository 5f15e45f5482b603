//! Minimal reverse-mode automatic differentiation over dense f64 tensors,
//! plus the optimizer stack used for training: classic momentum SGD, a
//! cosine learning-rate schedule and global-norm gradient clipping.
//!
//! Image tensors use NHWC layout throughout (`[batch, height, width,
//! channels]`), and conv kernels are `[k, k, in_channels, out_channels]`.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{softmax_rows, Gradients, Graph, Var};
pub use optim::{clip_global_norm, cosine_lr, global_norm, sgd_momentum_step, LrSchedule, OptimizerState, StepStats};
pub use params::{Checksum, ParameterVector};
pub use tensor::Tensor;
