//! Referring image segmentation, decoupled into "locate then segment":
//! fuse multi-level visual features with a sentence embedding, score every
//! spatial cell against a language-generated kernel (or a transformer
//! decoder) to obtain a position prior, then refine the prior into a
//! segmentation mask with an ASPP head.
//!
//! The crate ships the full pipeline: synthetic data generation, a JSONL
//! interchange loader, training, evaluation, ablations and visualization.

pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod objective;
pub mod viz;

pub use error::{Error, Result};

/// CPU inference backend.
pub type Infer = burn::backend::NdArray<f32>;
/// Autodiff-wrapped backend used for training.
pub type Train = burn::backend::Autodiff<Infer>;
