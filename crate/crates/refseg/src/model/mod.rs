//! The locate-then-segment model: text encoder, visual backbone,
//! cross-modal fusion, position prior localization and mask refinement.

pub mod backbone;
pub mod fusion;
pub mod gemm;
pub mod localization;
pub mod lts;
pub mod pos_enc;
pub mod seg_head;
pub mod text_encoder;

pub use backbone::{Backbone, BackboneConfig, FeaturePyramid};

use burn::tensor::backend::Backend;
use burn::tensor::Tensor;

/// Sigmoid in the backend's native element precision. The stock
/// activation routes through an f32 cast, which caps the accuracy of
/// f64 computations; this variant stays exact on f64 backends. Inputs
/// are clamped to +-30 where the function is saturated anyway, keeping
/// the exponential finite in f32.
pub fn native_sigmoid<B: Backend, const D: usize>(x: Tensor<B, D>) -> Tensor<B, D> {
    (x.clamp(-30.0, 30.0).neg().exp() + 1.0).recip()
}
pub use fusion::{CrossModalFeature, Fusion, FusionConfig};
pub use localization::{
    relevance_filter, LocalizationConfig, LocalizationMode, Localizer, PositionPrior,
};
pub use lts::{batch_tensors, tensor_to_array, LtsModel, LtsOutput, ModelConfig};
pub use pos_enc::{positional_encoding_2d, positional_encoding_tensor};
pub use seg_head::{AsppConfig, MaskPrediction, SegHead};
pub use text_encoder::{TextEncoder, TextEncoderConfig, TextEncoding};
