//! Dense `f64` tensors with tape-based reverse-mode automatic differentiation.
//!
//! The layer set covers what the joint/individual autoencoders need: dense
//! layers, 2-D (transposed) convolutions with cross-correlation semantics,
//! ReLU, flatten, concatenation and a mean-squared-error loss. Parameters
//! live in a [`ParamStore`] and are updated by an [`Optimizer`].

mod error;
mod graph;
mod kernels;
pub mod nn;
mod optim;
mod params;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{ParamId, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tensor::Tensor;
