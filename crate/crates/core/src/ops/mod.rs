//! Differentiable tensor operations. Each op is a method on [`Tensor`].
//!
//! [`Tensor`]: crate::tensor::Tensor

mod conv;
mod elementwise;
mod layout;
mod reduce;
mod resize;

pub use reduce::Pool;
pub use resize::{cubic_kernel, ResizeFactor};
