use burn::module::{Ignored, Module};
use burn::nn::conv::{Conv2d, Conv2dConfig, ConvTranspose2d, ConvTranspose2dConfig};
use burn::nn::PaddingConfig2d;
use burn::tensor::activation::leaky_relu;
use burn::tensor::backend::Backend;
use burn::tensor::Tensor;

use super::gemm::{conv2d_gemm, deconv2x2_gemm, upsample2x_nearest};
use super::localization::PositionPrior;

/// Mask logits over the stride-4 grid.
#[derive(Debug, Clone)]
pub struct MaskPrediction<B: Backend> {
    /// `[batch, H/4, W/4]`
    pub logits: Tensor<B, 3>,
}

impl<B: Backend> MaskPrediction<B> {
    pub fn prob(&self) -> Tensor<B, 3> {
        super::native_sigmoid(self.logits.clone())
    }
}

#[derive(Debug, Clone)]
pub struct AsppConfig {
    /// Dilation rates of the parallel 3x3 branches.
    pub rates: Vec<usize>,
    pub branch_channels: usize,
    pub negative_slope: f64,
    /// When false the head is bypassed and the prior is upsampled as-is
    /// (the locate-only ablation).
    pub enabled: bool,
}

impl AsppConfig {
    pub fn default_rates() -> Vec<usize> {
        vec![1, 6, 12, 18]
    }

    pub fn desk() -> Self {
        Self {
            rates: vec![1, 6, 12],
            branch_channels: 24,
            negative_slope: 0.1,
            enabled: true,
        }
    }

    pub fn paper_scale() -> Self {
        Self {
            rates: Self::default_rates(),
            branch_channels: 256,
            negative_slope: 0.1,
            enabled: true,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let mut seen = std::collections::HashSet::new();
        for &r in &self.rates {
            if r == 0 || !seen.insert(r) {
                return Err(crate::Error::Config(
                    "ASPP rates must be distinct and positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// ASPP refinement over concat(F_m3, prior), then one 2x deconvolution
/// and a 1x1 logit head.
#[derive(Module, Debug)]
pub struct SegHead<B: Backend> {
    pre: Conv2d<B>,
    dilated: Vec<Conv2d<B>>,
    point: Conv2d<B>,
    pool_proj: Conv2d<B>,
    fuse: Conv2d<B>,
    deconv: ConvTranspose2d<B>,
    head: Conv2d<B>,
    slope: Ignored<f64>,
    enabled: Ignored<bool>,
}

impl<B: Backend> SegHead<B> {
    pub fn new(cfg: &AsppConfig, d_f: usize, device: &B::Device) -> Self {
        let cin = d_f + 1; // cross-modal channels + 1 prior channel
        let bc = cfg.branch_channels;
        let dilated = cfg
            .rates
            .iter()
            .map(|&r| {
                Conv2dConfig::new([bc, bc], [3, 3])
                    .with_dilation([r, r])
                    .with_padding(PaddingConfig2d::Explicit(r, r))
                    .init(device)
            })
            .collect::<Vec<_>>();
        let n_branches = cfg.rates.len() + 2; // + 1x1 branch + pooled branch
        Self {
            pre: Conv2dConfig::new([cin, bc], [1, 1]).init(device),
            point: Conv2dConfig::new([bc, bc], [1, 1]).init(device),
            pool_proj: Conv2dConfig::new([bc, bc], [1, 1]).init(device),
            fuse: Conv2dConfig::new([n_branches * bc, d_f], [1, 1]).init(device),
            deconv: ConvTranspose2dConfig::new([d_f, d_f / 2], [2, 2])
                .with_stride([2, 2])
                .init(device),
            head: Conv2dConfig::new([d_f / 2, 1], [1, 1]).init(device),
            dilated,
            slope: Ignored(cfg.negative_slope),
            enabled: Ignored(cfg.enabled),
        }
    }

    pub fn set_enabled(&mut self, enabled: bool) {
        self.enabled = Ignored(enabled);
    }

    pub fn enabled(&self) -> bool {
        self.enabled.0
    }

    fn g(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        leaky_relu(x, self.slope.0)
    }

    /// Parallel dilated branches + 1x1 branch + image-level pooled branch,
    /// concatenated and fused back to `d_f` channels. Spatial size is
    /// preserved.
    pub fn aspp(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        let [b, _, h, w] = x.dims();
        // shared 1x1 projection keeps the dilated branches narrow
        let x = self.g(conv2d_gemm(&self.pre, x));
        let [_, c, _, _] = x.dims();
        let mut branches: Vec<Tensor<B, 4>> = self
            .dilated
            .iter()
            .map(|conv| self.g(conv2d_gemm(conv, x.clone())))
            .collect();
        branches.push(self.g(conv2d_gemm(&self.point, x.clone())));
        let pooled = x.mean_dim(2).mean_dim(3).reshape([b, c, 1, 1]);
        let pooled = self.g(conv2d_gemm(&self.pool_proj, pooled));
        let [_, bc, _, _] = pooled.dims();
        branches.push(pooled.expand([b, bc, h, w]));
        conv2d_gemm(&self.fuse, Tensor::cat(branches, 1))
    }

    /// Produces stride-4 logits from the stride-8 cross-modal feature and
    /// the position prior.
    pub fn forward(&self, f_m3: Tensor<B, 4>, prior: &PositionPrior<B>) -> MaskPrediction<B> {
        let [b, _, h, w] = f_m3.dims();
        if !self.enabled.0 {
            let logits = upsample2x_nearest(prior.logits.clone().reshape([b, 1, h, w]))
                .reshape([b, 2 * h, 2 * w]);
            return MaskPrediction { logits };
        }
        let x = Tensor::cat(
            vec![f_m3, prior.prior().reshape([b, 1, h, w])],
            1,
        );
        let x = self.g(self.aspp(x));
        let x = self.g(deconv2x2_gemm(&self.deconv, x));
        let logits = conv2d_gemm(&self.head, x).reshape([b, 2 * h, 2 * w]);
        MaskPrediction { logits }
    }
}
