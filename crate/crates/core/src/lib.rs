//! Images as sets of 2D Gaussians: fitting, rendering and compression.
//!
//! The float pipeline (model, rasterizer, gradients, training, metrics) is
//! generic over [`Scalar`]; the quantized representation and the codecs work
//! on fixed-width integer codes with `f32` metadata.

pub mod bitsback;
pub mod codec;
mod error;
pub mod filter;
pub mod grad;
pub mod image;
pub mod metrics;
pub mod model;
pub mod quant;
pub mod raster;
mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use image::{ImageBuffer, CHANNELS};
pub use model::{FactorizationKind, Gaussian2D, GaussianCloud};
pub use quant::{QuantizedCloud, QuantizedGaussian};
pub use raster::{render, RenderConfig};
pub use scalar::Scalar;

pub type Cloud32 = GaussianCloud<f32>;
pub type Cloud64 = GaussianCloud<f64>;
pub type Image32 = ImageBuffer<f32>;
pub type Image64 = ImageBuffer<f64>;
pub type Gaussian32 = Gaussian2D<f32>;
pub type Gaussian64 = Gaussian2D<f64>;
