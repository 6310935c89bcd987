//! Panoramic ECG view synthesis: a small reverse-mode autodiff engine, a
//! cardiac dipole simulator with a least-squares oracle, and the
//! geometry-aware view transformer trained on top of them.

pub mod autodiff;
pub mod dataset;
pub mod dipole;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Graph, Var};
pub use rng::Seed;
pub use scalar::Scalar;
pub use tensor::{Tensor, TensorError};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type GeoVt32 = model::GeoVtModel<f32>;
pub type GeoVt64 = model::GeoVtModel<f64>;
