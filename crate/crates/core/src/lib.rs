//! Audio-visual captioning toolkit.
//!
//! An audio encoder turns log-mel patches into a feature sequence, a linear
//! projection maps precomputed visual features to the same width, and a
//! Transformer decoder generates captions. The decoder's cross-modal sublayer
//! is selectable ([`model::FusionMode`]): audio only, video only, time-axis
//! concatenation, or adaptive confidence-gated fusion, where a learned
//! per-element confidence decides how much of the audio and visual
//! cross-attention outputs survive a hard threshold.

pub mod data;
pub mod error;
pub mod frontend;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Real, Tensor};
