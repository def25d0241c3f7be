//! Progressive latent replay for continual learning.
//!
//! The crate trains a convolutional classifier on a class-incremental task
//! stream while rehearsing internal feature representations, either drawn
//! from a fixed-capacity buffer or sampled from a feature-space variational
//! autoencoder, at per-depth frequencies given by an update strategy
//! `S = [f_0, ..., f_{H-1}]`. Shallow injection levels rehearse the whole
//! fully-connected stack; deeper ones touch progressively fewer parameters,
//! and the `cost` module prices each strategy analytically.
//!
//! Modules map onto the moving parts:
//! - [`arch`]: classifiers with per-level feature taps and partial forwards
//! - [`generator`]: the feature-space VAE (and an image-space VAE baseline)
//! - [`replay`]: strategies, batch apportionment, buffers, training loops
//! - [`cost`]: the analytic update-count model `U(S)` and relative cost `R(S)`
//! - [`scenario`]: datasets, task streams, pretraining, freezing setups
//! - [`metrics`]: accuracy aggregation and feature-space Frechet distance
//! - [`harness`]: experiment configs, runner, tables and plots

pub mod arch;
pub mod cost;
pub mod error;
pub mod generator;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod replay;
pub mod scenario;

pub use error::{Error, Result};
