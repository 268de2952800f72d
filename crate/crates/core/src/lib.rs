//! Multimodal prediction of future vehicle positions with a grid-latent
//! Gaussian mixture.
//!
//! The static map around the vehicle is split into an `n x n` grid; every
//! grid cell owns one component of a Gaussian mixture whose weight is a class
//! probability and whose mean is an offset from the cell center. Training
//! minimises a cross-entropy term over cells plus a single-component Gaussian
//! regression term, inference keeps distinct modes via non-maximum
//! suppression.
//!
//! Module map:
//! - [`features`]: vehicle-frame transforms, input features, targets
//! - [`map`]: map rasterization, the latent grid, latent class assignment
//! - [`mixture`]: mixture likelihoods, the decomposed loss, densities
//! - [`network`]: the CNN + LSTM model with hand-written backpropagation
//! - [`inference`]: non-maximum suppression over mixture components
//! - [`metrics`]: ADE / minADE / FDE and measurement-noise correction
//! - [`data`]: synthetic scenarios, resampling, noise estimation, file I/O

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod features;
pub mod inference;
pub mod map;
pub mod metrics;
pub mod mixture;
pub mod network;
mod numeric;

pub use error::{Error, Result};

/// Sample interval of resampled tracks, in milliseconds.
pub const SAMPLE_INTERVAL_MS: i64 = 100;
