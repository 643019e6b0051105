//! Point-cloud learning with diffusion units.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors with a reverse-mode tape.
//! - [`geometry`]: farthest-point sampling, kNN / radius search, 3-NN
//!   interpolation weights.
//! - [`layers`]: the learned filter, the diffusion unit, relative
//!   positional encoding and the depthwise kernel-point convolution.
//! - [`diffusion_lab`]: handcrafted-diffusivity stepping used as an oracle
//!   for the learned layer, plus the step-edge experiment.
//! - [`model`]: encoder/decoder networks and the smoothness probe.
//! - [`data`]: synthetic datasets, the `.duc` text format, augmentation.
//! - [`train`]: losses, optimizers, metrics, checkpoints and the fit loop.
//!
//! Inner loops go through [`par`], which uses rayon when the `parallel`
//! feature is enabled and produces bit-identical results either way.

pub mod data;
pub mod diffusion_lab;
pub mod error;
pub mod geometry;
pub mod layers;
pub mod model;
pub mod par;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
