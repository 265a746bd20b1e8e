#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod constraints;
pub mod error;
pub mod io;
pub mod model_zoo;
pub mod quant;
pub mod rng;
mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type TensorF32 = Tensor<f32>;
pub type TensorF64 = Tensor<f64>;
pub type NetworkF32 = model_zoo::Network<f32>;
pub type NetworkF64 = model_zoo::Network<f64>;
pub type DatasetF32 = model_zoo::Dataset<f32>;
pub type DatasetF64 = model_zoo::Dataset<f64>;
pub type QuantizerF32 = quant::Quantizer<f32>;
pub type QuantizerF64 = quant::Quantizer<f64>;
