//! Building blocks for small convolutional classifiers trained from scratch:
//! NCHW tensors with convolution and pooling, differentiable layers with
//! hand-written backward rules, losses, Adam, a finite-difference gradient
//! checker, and miniature DenseNet/ResNet-style model graphs.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! training pipeline and gradient checks use.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{out_size, ConvSpec, Shape4, Tensor4};

/// Default 64-bit tensor.
pub type Tensor = tensor::Tensor4<f64>;
/// Default 64-bit model graph.
pub type Model = model::ModelGraph<f64>;
/// Default 64-bit Adam state.
pub type Adam = adam::AdamState<f64>;
/// Default 64-bit dense-layer parameters.
pub type Dense = nn::DenseParams<f64>;
