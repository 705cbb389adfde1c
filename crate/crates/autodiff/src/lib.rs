//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Graph`] records operations on 2-D [`Tensor`]s; [`Graph::backward`]
//! returns gradients for every tracked leaf. [`ParamSet`] owns trainable
//! tensors and Adam state, and [`nn`] builds the dense, LSTM and attention
//! layers used by the attack and detection agents on top of the primitives.

pub mod check;
pub mod checkpoint;
mod error;
mod graph;
pub mod nn;
mod params;
mod tensor;

pub use error::{AutodiffError, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{adam_step, AdamConfig, ParamId, ParamSet};
pub use tensor::Tensor;
