//! Compression toolkit for autoencoders used in multivariate time-series
//! anomaly detection.
//!
//! The workflow has three stages:
//!
//! 1. [`pruning`]: population-based lottery-ticket search over per-layer
//!    densities, with short masked retraining of each candidate and a long
//!    masked retraining of the best one.
//! 2. [`quantization`]: linear fixed-point quantization of weights, or
//!    k-means codebook quantization with fixed-point centroids, plus 8-bit
//!    activation quantization.
//! 3. [`cost`]: MAC and capacity accounting for the compressed model.
//!
//! Training, scoring and data plumbing live in [`nn`], [`autoencoder`],
//! [`detection`] and [`data`]. Models are persisted with [`modelfile`].
//!
//! With the `parallel` feature (on by default) population search, window
//! scoring and per-layer quantization run on rayon; [`exec::Exec`] selects
//! the sequential path at runtime and is the only fallback without the
//! feature.

pub mod autoencoder;
pub mod bitpack;
pub mod cost;
pub mod data;
pub mod detection;
pub mod error;
pub mod exec;
pub mod modelfile;
pub mod nn;
pub mod pruning;
pub mod quantization;
pub mod rng;
pub mod tensor;

pub use autoencoder::{AutoencoderModel, InputShape, TrainConfig};
pub use error::{Error, Result};
pub use exec::Exec;
pub use tensor::Tensor;
