//! Guided depth super-resolution with gradient-domain calibration and
//! frequency-domain spectrum differencing.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine over
//! 4-D `f64` tensors ([`tensor`], [`ops`]), a differentiable 2-D DFT
//! ([`spectral`]), the network blocks ([`blocks`], [`gcm`], [`fam`]), the
//! assembled model and its three-domain loss ([`model`]), synthetic data and
//! file formats ([`data`]) and the training loop ([`train`]).

pub mod blocks;
pub mod branch;
pub mod config;
pub mod data;
pub mod error;
pub mod fam;
pub mod model;
pub mod gcm;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use ops::{Pool, ResizeFactor};
pub use tensor::{no_grad, Shape, Tensor};
