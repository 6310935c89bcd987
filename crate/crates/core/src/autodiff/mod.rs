//! Reverse-mode automatic differentiation over dense tensors.

pub mod gradcheck;
mod graph;
pub mod kernels;

pub use graph::{Gradients, Graph, Var};
