//! Segmentation networks for fetal-head ultrasound, built on a small
//! reverse-mode autodiff engine.
//!
//! The crate covers the full loop: synthetic phantom generation (or ingestion
//! of an ultrasound dataset laid out on disk), four encoder-decoder variants
//! (plain U-Net, residual encoders, attention-gated skips, and both
//! combined), Adam training with BCE loss, overlap and boundary-distance
//! metrics with paired significance tests, and Grad-CAM / attention-map
//! inspection. Everything is deterministic for a fixed seed and runs on a
//! single CPU core.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod saliency;
pub mod stats;
pub mod tensor;
pub mod train;

pub use error::{AruError, Result};
pub use tensor::{DType, Element, Mode, Shape, Tensor};
