//! Multi-channel spatio-temporal traffic forecasting with selective
//! state-space (Mamba-style) blocks, built on a small reverse-mode tensor
//! engine.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`autodiff`], [`params`], [`checkpoint`]: dense `f64`
//!   arrays, a gradient tape, named parameters and their on-disk format
//! - [`ssm`]: discretisation, sequential/parallel selective scans and the
//!   gated SSM block with its norm/residual/FFN wrapper
//! - [`embeddings`], [`model`]: the feature/periodic/spatial/adaptive input
//!   embedding and the dual-pathway forecaster
//! - [`data`]: dataset files, z-score normalisation, sliding windows and a
//!   synthetic traffic generator
//! - [`training`]: MSE, Adam, cosine schedule, early stopping, metrics and the
//!   historical baselines
//! - [`config`], [`commands`]: run configuration and the operations behind
//!   the `mcst` binary
//!
//! Runnable walkthroughs live in this crate's `examples/` directory.

pub mod autodiff;
pub mod checkpoint;
mod codec;
pub mod commands;
pub mod config;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod init;
pub mod model;
pub mod params;
pub mod ssm;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
