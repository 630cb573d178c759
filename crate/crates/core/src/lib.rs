//! Hyperspectral pixel classification with gated cross-modal attention
//! and a state-space recurrence, on a small reverse-mode autodiff core.
//!
//! Everything numeric is generic over [`Scalar`]; the aliases below name
//! the concrete instantiations.

pub mod data;
pub mod model;
pub mod profile;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use scalar::{DoubleDouble, Scalar};

pub type TensorF64 = tensor::Tensor<f64>;
pub type TensorF32 = tensor::Tensor<f32>;
pub type GraphF64 = tensor::Graph<f64>;
pub type ModelF64 = model::Mhssmamba<f64>;
pub type ModelF32 = model::Mhssmamba<f32>;
pub type ParamsF64 = model::ModelParams<tensor::Tensor<f64>>;
