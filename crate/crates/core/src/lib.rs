//! Differentiable image enhancement with a learned no-reference quality
//! penalty.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: reverse-mode differentiation over [`Tensor`] graphs.
//! * [`nn`]: dilated convolution with symmetric padding, leaky ReLU, pooling,
//!   fully-connected and soft-max layers, seeded initialization.
//! * [`quality`]: rating distributions, the EMD loss, the small quality
//!   predictor and its evaluation metrics.
//! * [`enhance`]: the context-aggregation enhancement network and the
//!   combined fidelity-plus-quality loss.
//! * [`train`]: optimizers, schedules, both training loops and checkpoints.
//! * [`data`]: PPM I/O, synthetic operators and dataset generation.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod enhance;
pub mod error;
pub mod nn;
pub mod params;
pub mod quality;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::ParamSet;
pub use tensor::Tensor;
