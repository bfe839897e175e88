//! Multivariate time-series anomaly detection with feature- and
//! time-oriented graph attention, a GRU encoder and jointly trained
//! forecasting and VAE reconstruction heads.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors and the reverse-mode tape everything is built on.
//! - [`preprocess`]: min-max normalisation and spectral-residual cleaning.
//! - [`gat`]: single-head graph attention over complete graphs.
//! - [`network`]: the full forward pass and both loss terms.
//! - [`trainer`]: sliding windows, Adam, the training loop and checkpoints.
//! - [`scoring`]: per-timestamp inference scores and POT thresholding.
//! - [`evaluation`]: segment-adjusted metrics and root-cause ranking metrics.

pub mod error;
pub mod evaluation;
pub mod gat;
pub mod network;
pub mod preprocess;
pub mod scoring;
pub mod tensor;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
