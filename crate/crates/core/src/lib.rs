//! Transformer survival modelling on longitudinal images.
//!
//! A vision encoder embeds each visit's image, a causal sequence encoder
//! summarizes the visits up to a landmark time, and a small head maps the
//! summary to a Cox risk score. Training minimizes the elastic-net
//! regularized negative log partial likelihood.
//!
//! Also here: a synthetic cohort generator, an FPCA-Cox baseline,
//! censoring-aware metrics with cross-validation, and occlusion maps.

pub mod checkpoint;
pub mod cox;
pub mod data;
pub mod dataset;
mod error;
pub mod evaluate;
pub mod fpca;
pub mod image;
pub mod interpret;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod simgen;
pub mod train;

pub use error::{Error, Result};
pub use tensor;
