//! Dense `f64` tensors, a reverse-mode autodiff tape and an Adam optimizer.
//!
//! The tape records one forward evaluation; [`Tape::backward`] returns the
//! gradient of a scalar node with respect to every parameter registered on
//! it. Numeric failures (NaN/Inf) surface as errors at the op that produced
//! them.

pub mod adam;
mod error;
mod params;
mod tape;
mod tensor;

pub use adam::Adam;
pub use error::{Result, TensorError};
pub use params::{Gradients, ParameterStore};
pub use tape::{gelu, gelu_grad, normal_cdf, Mask, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
