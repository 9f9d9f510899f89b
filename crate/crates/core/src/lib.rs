//! Learned-transform image codec.
//!
//! A convolutional autoencoder with GDN nonlinearities is trained jointly with
//! one quantization step per latent feature map. At test time a single global
//! multiplier on those steps trades rate for distortion. Quantized latents are
//! coded losslessly with an adaptive binary arithmetic coder.

pub mod error;
pub mod tensor;
pub mod kernels;
pub mod graph;
pub mod entropy;
pub mod model;
pub mod quantization;
pub mod image_io;
pub mod codec;
pub mod training;
pub mod synth;
pub mod analysis;

pub use error::{Error, Result};
pub use tensor::Tensor;
