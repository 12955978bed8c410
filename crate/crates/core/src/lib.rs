//! Mixture-of-experts single-image super-resolution.
//!
//! Several sparse-coding (or plain convolutional) expert networks each produce a
//! high-resolution luminance estimate from a bicubic-upscaled input; a small
//! gating network produces one weight map per expert, and the output is the
//! pixel-wise weighted sum of the estimates. All of it is trained jointly.

pub mod error;
pub mod experts;
pub mod gradcheck;
pub mod imaging;
pub mod inference;
pub mod metrics;
pub mod mixture;
pub mod ops;
pub mod store;
pub mod tensor;
pub mod training;

pub use error::{Error, Result, StoreError};
pub use tensor::{Parameter, Parameterized, Real, Shape, Tensor};
