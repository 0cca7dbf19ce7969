//! Ambient temperature estimation from outdoor scene images.
//!
//! The crate covers the whole pipeline: temperature label encodings, a small
//! from-scratch neural network stack (CNN classifier and CNN→LSTM forecaster),
//! webcam manifest handling with hour-slot alignment and consecutive-day
//! sequences, training with checkpoints, RMSE evaluation grids and block
//! variation saliency maps.

pub mod dataset;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod saliency;
pub mod training;

pub use error::{Error, Result};
