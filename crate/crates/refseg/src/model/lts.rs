use burn::module::Module;
use burn::tensor::backend::Backend;
use burn::tensor::{Tensor, TensorData};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{ImageSample, TokenSequence};
use crate::model::{
    AsppConfig, Backbone, BackboneConfig, Fusion, FusionConfig, LocalizationConfig, Localizer,
    MaskPrediction, PositionPrior, SegHead, TextEncoder, TextEncoderConfig,
};

/// Hyperparameters for the full model. The desk preset keeps every width
/// small enough for CPU training; the paper-scale preset mirrors the
/// published architecture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub gru_hidden: usize,
    pub backbone: BackboneSpec,
    pub d_f: usize,
    pub localization: LocSpec,
    pub aspp_rates: Vec<usize>,
    pub aspp_channels: usize,
    pub negative_slope: f64,
    pub fusion_enabled: bool,
    pub seg_enabled: bool,
}

/// Serializable mirror of [`BackboneConfig`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub stem_channels: usize,
    pub stage_channels: [usize; 4],
    pub blocks_per_stage: [usize; 4],
}

/// Serializable mirror of [`LocalizationConfig`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocSpec {
    pub mode: String,
    pub n_filters: usize,
    pub d_k: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub positional_encoding: bool,
}

impl ModelConfig {
    pub fn desk(vocab_size: usize) -> Self {
        let b = BackboneConfig::desk();
        let l = LocalizationConfig::desk();
        let a = AsppConfig::desk();
        Self {
            vocab_size,
            max_len: 15,
            gru_hidden: 48,
            backbone: BackboneSpec {
                stem_channels: b.stem_channels,
                stage_channels: b.stage_channels,
                blocks_per_stage: b.blocks_per_stage,
            },
            d_f: 64,
            localization: LocSpec {
                mode: l.mode.to_string(),
                n_filters: l.n_filters,
                d_k: l.d_k,
                heads: l.heads,
                ffn_hidden: l.ffn_hidden,
                positional_encoding: l.positional_encoding,
            },
            aspp_rates: a.rates,
            aspp_channels: a.branch_channels,
            negative_slope: 0.1,
            fusion_enabled: true,
            seg_enabled: true,
        }
    }

    pub fn paper_scale(vocab_size: usize) -> Self {
        let b = BackboneConfig::paper_scale();
        let l = LocalizationConfig::paper_scale();
        let a = AsppConfig::paper_scale();
        Self {
            vocab_size,
            max_len: 15,
            gru_hidden: 1024,
            backbone: BackboneSpec {
                stem_channels: b.stem_channels,
                stage_channels: b.stage_channels,
                blocks_per_stage: b.blocks_per_stage,
            },
            d_f: 512,
            localization: LocSpec {
                mode: l.mode.to_string(),
                n_filters: l.n_filters,
                d_k: l.d_k,
                heads: l.heads,
                ffn_hidden: l.ffn_hidden,
                positional_encoding: l.positional_encoding,
            },
            aspp_rates: a.rates,
            aspp_channels: a.branch_channels,
            negative_slope: 0.1,
            fusion_enabled: true,
            seg_enabled: true,
        }
    }

    pub fn backbone_config(&self) -> BackboneConfig {
        BackboneConfig {
            stem_channels: self.backbone.stem_channels,
            stage_channels: self.backbone.stage_channels,
            blocks_per_stage: self.backbone.blocks_per_stage,
            negative_slope: self.negative_slope,
        }
    }

    pub fn localization_config(&self) -> crate::Result<LocalizationConfig> {
        let cfg = LocalizationConfig {
            mode: self.localization.mode.parse()?,
            n_filters: self.localization.n_filters,
            d_k: self.localization.d_k,
            heads: self.localization.heads,
            ffn_hidden: self.localization.ffn_hidden,
            positional_encoding: self.localization.positional_encoding,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.vocab_size < 2 {
            return Err(crate::Error::Config("vocab_size must be at least 2".into()));
        }
        if self.max_len == 0 || self.gru_hidden == 0 || self.d_f == 0 {
            return Err(crate::Error::Config(
                "max_len, gru_hidden and d_f must be positive".into(),
            ));
        }
        self.localization_config()?;
        AsppConfig {
            rates: self.aspp_rates.clone(),
            branch_channels: self.aspp_channels,
            negative_slope: self.negative_slope,
            enabled: self.seg_enabled,
        }
        .validate()
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone)]
pub struct LtsOutput<B: Backend> {
    /// Position prior over the stride-8 grid.
    pub prior: PositionPrior<B>,
    /// Refined mask logits over the stride-4 grid.
    pub mask: MaskPrediction<B>,
}

/// The full referring segmentation model.
#[derive(Module, Debug)]
pub struct LtsModel<B: Backend> {
    pub text: TextEncoder<B>,
    pub backbone: Backbone<B>,
    pub fusion: Fusion<B>,
    pub localizer: Localizer<B>,
    pub seg_head: SegHead<B>,
}

impl<B: Backend> LtsModel<B> {
    pub fn new(cfg: &ModelConfig, device: &B::Device) -> crate::Result<Self> {
        cfg.validate()?;
        let backbone_cfg = cfg.backbone_config();
        let (d1, d2, d3) = backbone_cfg.tap_channels();
        let fusion_cfg = FusionConfig {
            d_f: cfg.d_f,
            negative_slope: cfg.negative_slope,
            enabled: cfg.fusion_enabled,
        };
        let loc_cfg = cfg.localization_config()?;
        let aspp_cfg = AsppConfig {
            rates: cfg.aspp_rates.clone(),
            branch_channels: cfg.aspp_channels,
            negative_slope: cfg.negative_slope,
            enabled: cfg.seg_enabled,
        };
        let text_dim = 2 * cfg.gru_hidden;
        Ok(Self {
            text: TextEncoder::new(
                &TextEncoderConfig {
                    vocab_size: cfg.vocab_size,
                    hidden_dim: cfg.gru_hidden,
                    max_len: cfg.max_len,
                },
                device,
            ),
            backbone: Backbone::new(&backbone_cfg, device),
            fusion: Fusion::new(&fusion_cfg, text_dim, (d1, d2, d3), device),
            localizer: Localizer::new(&loc_cfg, cfg.d_f, text_dim, device),
            seg_head: SegHead::new(&aspp_cfg, cfg.d_f, device),
        })
    }

    /// Runs the pipeline: backbone pyramid, cross-modal fusion, position
    /// prior over the stride-8 cross-modal feature, then mask refinement
    /// on the same feature concatenated with the prior, decoded to stride
    /// 4.
    pub fn forward(&self, images: Tensor<B, 4>, tokens: &[TokenSequence]) -> LtsOutput<B> {
        let encoding = self.text.forward(tokens);
        let pyramid = self.backbone.forward(images);
        let fused = self.fusion.forward(&pyramid, encoding.f_text.clone());
        let prior = self.localizer.forward(fused.f_m3.clone(), encoding.f_text.clone());
        let mask = self.seg_head.forward(fused.f_m3.clone(), &prior);
        LtsOutput { prior, mask }
    }
}

/// Stacks samples into a `[batch, 3, H, W]` image tensor, the token
/// sequences and a `[batch, H, W]` mask tensor. All samples must share a
/// resolution and carry tokens.
pub fn batch_tensors<B: Backend>(
    samples: &[&ImageSample],
    device: &B::Device,
) -> crate::Result<(Tensor<B, 4>, Vec<TokenSequence>, Tensor<B, 3>)> {
    let first = samples
        .first()
        .ok_or_else(|| crate::Error::Internal("empty batch".into()))?;
    let (h, w, _) = first.image.dim();
    let n = samples.len();
    let mut pixels = Vec::with_capacity(n * 3 * h * w);
    let mut masks = Vec::with_capacity(n * h * w);
    let mut tokens = Vec::with_capacity(n);
    for s in samples {
        if s.image.dim() != (h, w, 3) {
            return Err(crate::Error::Internal(
                "batch mixes image resolutions".into(),
            ));
        }
        let seq = s.tokens.as_ref().ok_or_else(|| {
            crate::Error::Internal("sample is missing tokens; call with_tokens first".into())
        })?;
        // HWC to CHW
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    pixels.push(s.image[(y, x, c)]);
                }
            }
        }
        masks.extend(s.gt_mask.iter().map(|&v| v as f32));
        tokens.push(seq.clone());
    }
    let images = Tensor::from_data(TensorData::new(pixels, [n, 3, h, w]), device);
    let gt = Tensor::from_data(TensorData::new(masks, [n, h, w]), device);
    Ok((images, tokens, gt))
}

/// Converts one `[H, W]` slice of a probability tensor back to a host
/// array.
pub fn tensor_to_array<B: Backend>(t: Tensor<B, 2>) -> Array2<f32> {
    let [h, w] = t.dims();
    let v: Vec<f32> = t.into_data().to_vec().unwrap();
    Array2::from_shape_vec((h, w), v).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, generate_synthetic, SynthConfig};
    use crate::Infer as B;

    fn tiny_config(vocab_size: usize) -> ModelConfig {
        let mut cfg = ModelConfig::desk(vocab_size);
        cfg.gru_hidden = 8;
        cfg.d_f = 12;
        cfg.backbone = BackboneSpec {
            stem_channels: 4,
            stage_channels: [4, 8, 12, 16],
            blocks_per_stage: [0, 1, 1, 1],
        };
        cfg.localization.d_k = 12;
        cfg.localization.ffn_hidden = 16;
        cfg.aspp_rates = vec![1, 2];
        cfg.aspp_channels = 6;
        cfg
    }

    #[test]
    fn forward_shape_contract_across_resolutions() {
        <B as Backend>::seed(5);
        let device = Default::default();
        let synth = generate_synthetic(
            &SynthConfig {
                image_size: 416,
                ..SynthConfig::default()
            },
            3,
        )
        .unwrap();
        let exprs: Vec<String> = synth.iter().map(|s| s.expression.clone()).collect();
        let vocab = build_vocab(&exprs, 1).unwrap();
        let cfg = tiny_config(vocab.len());
        let model = LtsModel::<B>::new(&cfg, &device).unwrap();
        for res in [416usize, 320] {
            let samples: Vec<ImageSample> = synth
                .iter()
                .map(|s| {
                    crate::data::resize_sample(s, res)
                        .unwrap()
                        .with_tokens(&vocab, cfg.max_len)
                        .unwrap()
                })
                .collect();
            let refs: Vec<&ImageSample> = samples.iter().collect();
            let (images, tokens, gt) = batch_tensors::<B>(&refs, &device).unwrap();
            assert_eq!(gt.dims(), [3, res, res]);
            let out = model.forward(images, &tokens);
            assert_eq!(out.prior.logits.dims(), [3, res / 8, res / 8]);
            assert_eq!(out.mask.logits.dims(), [3, res / 4, res / 4]);
        }
    }

    #[test]
    fn batch_tensors_rejects_missing_tokens() {
        let synth = generate_synthetic(
            &SynthConfig {
                image_size: 64,
                ..SynthConfig::default()
            },
            1,
        )
        .unwrap();
        let refs: Vec<&ImageSample> = synth.iter().collect();
        let err = batch_tensors::<B>(&refs, &Default::default());
        assert!(err.is_err());
    }

    #[test]
    fn config_validation_catches_bad_mode() {
        let mut cfg = tiny_config(10);
        cfg.localization.mode = "solver".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn desk_and_paper_presets_validate() {
        assert!(ModelConfig::desk(100).validate().is_ok());
        assert!(ModelConfig::paper_scale(100).validate().is_ok());
    }
}
