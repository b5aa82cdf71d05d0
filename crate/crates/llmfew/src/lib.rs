//! Few-shot multivariate time series classification.
//!
//! The pipeline patches each instance per channel, encodes the patches with
//! a stack of residual weight-normalized dilated causal convolutions, runs
//! the token embeddings through a causal decoder whose attention Q/K/V
//! projections carry low-rank adapters (the rest of the decoder stays
//! frozen), fuses encoder and decoder outputs with a residual ReLU, and
//! classifies the flattened representation with a linear + layer-norm +
//! softmax head. An experiment harness reproduces the N-way-K-shot
//! protocol over UEA-format datasets: per-class episode sampling, a fixed
//! 200-epoch schedule with step-decayed learning rate, and 5-seed
//! mean ± std reporting.

pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod head;
pub mod lora;
pub mod model;
pub mod nn;
pub mod patching;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
