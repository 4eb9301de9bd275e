//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Only the operations the searched architectures need are provided:
//! convolution, max and adaptive-average pooling, dense layers, statistics
//! pooling, cosine similarity, softmax cross-entropy, a time-delay splice and
//! a handful of elementwise helpers. Graphs are rebuilt on every forward pass.

mod adam;
pub mod checkpoint;
mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, Moments};
pub use graph::{Gradients, Graph, Var, STATS_EPS};
pub use params::{Binder, ParamSet};
pub use tensor::Tensor;
