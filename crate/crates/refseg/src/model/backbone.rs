use burn::module::{Ignored, Module};
use burn::nn::conv::{Conv2d, Conv2dConfig};
use burn::nn::PaddingConfig2d;
use burn::tensor::activation::leaky_relu;
use burn::tensor::backend::Backend;
use burn::tensor::Tensor;

use super::gemm::conv2d_gemm;

/// Three-level feature pyramid at strides 32 / 16 / 8.
#[derive(Debug, Clone)]
pub struct FeaturePyramid<B: Backend> {
    /// `[batch, d1, H/32, W/32]`
    pub f_v1: Tensor<B, 4>,
    /// `[batch, d2, H/16, W/16]`
    pub f_v2: Tensor<B, 4>,
    /// `[batch, d3, H/8, W/8]`
    pub f_v3: Tensor<B, 4>,
}

/// Residual ConvNet configuration. The stem halves the resolution, each
/// of the four stages halves it again, so the network reaches stride 32;
/// the taps at strides 8/16/32 define (d3, d2, d1).
#[derive(Debug, Clone)]
pub struct BackboneConfig {
    /// Channels after the stride-2 stem.
    pub stem_channels: usize,
    /// Channels after each stage, at strides 4 / 8 / 16 / 32.
    pub stage_channels: [usize; 4],
    /// Residual blocks per stage.
    pub blocks_per_stage: [usize; 4],
    pub negative_slope: f64,
}

impl BackboneConfig {
    pub fn desk() -> Self {
        Self {
            stem_channels: 8,
            stage_channels: [16, 32, 48, 64],
            blocks_per_stage: [0, 2, 2, 2],
            negative_slope: 0.1,
        }
    }

    pub fn paper_scale() -> Self {
        Self {
            stem_channels: 64,
            stage_channels: [128, 256, 512, 1024],
            blocks_per_stage: [1, 2, 4, 4],
            negative_slope: 0.1,
        }
    }

    /// (d3, d2, d1): channel widths of the stride-8/16/32 taps.
    pub fn tap_channels(&self) -> (usize, usize, usize) {
        (
            self.stage_channels[1],
            self.stage_channels[2],
            self.stage_channels[3],
        )
    }
}

/// Rearranges each 2x2 spatial block into four channels, halving the
/// resolution. Channel order is (source channel, dy, dx).
fn pixel_unshuffle<B: Backend>(x: Tensor<B, 4>) -> Tensor<B, 4> {
    let [b, c, h, w] = x.dims();
    assert!(h % 2 == 0 && w % 2 == 0, "pixel_unshuffle needs even extent");
    x.reshape([b, c, h / 2, 2, w / 2, 2])
        .permute([0, 1, 3, 5, 2, 4])
        .reshape([b, 4 * c, h / 2, w / 2])
}

/// Stride-2 downsampling: 2x2 blocks folded into channels followed by a
/// 1x1 projection, which together equal a 2x2 stride-2 convolution but
/// run as a single matmul.
#[derive(Module, Debug)]
struct PatchDown<B: Backend> {
    proj: Conv2d<B>,
    slope: Ignored<f64>,
}

impl<B: Backend> PatchDown<B> {
    fn new(cin: usize, cout: usize, slope: f64, device: &B::Device) -> Self {
        Self {
            proj: Conv2dConfig::new([4 * cin, cout], [1, 1]).init(device),
            slope: Ignored(slope),
        }
    }

    fn forward(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        leaky_relu(
            conv2d_gemm(&self.proj, pixel_unshuffle(x)),
            self.slope.0,
        )
    }
}

#[derive(Module, Debug)]
struct ConvLeaky<B: Backend> {
    conv: Conv2d<B>,
    slope: Ignored<f64>,
}

impl<B: Backend> ConvLeaky<B> {
    fn new(cin: usize, cout: usize, kernel: usize, slope: f64, device: &B::Device) -> Self {
        let pad = kernel / 2;
        Self {
            conv: Conv2dConfig::new([cin, cout], [kernel, kernel])
                .with_padding(PaddingConfig2d::Explicit(pad, pad))
                .init(device),
            slope: Ignored(slope),
        }
    }

    fn forward(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        leaky_relu(conv2d_gemm(&self.conv, x), self.slope.0)
    }
}

/// Darknet-style residual block: 1x1 bottleneck, 3x3, additive skip.
#[derive(Module, Debug)]
struct ResidualBlock<B: Backend> {
    reduce: ConvLeaky<B>,
    expand: ConvLeaky<B>,
}

impl<B: Backend> ResidualBlock<B> {
    fn new(channels: usize, slope: f64, device: &B::Device) -> Self {
        let mid = (channels / 2).max(1);
        Self {
            reduce: ConvLeaky::new(channels, mid, 1, slope, device),
            expand: ConvLeaky::new(mid, channels, 3, slope, device),
        }
    }

    fn forward(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        let y = self.expand.forward(self.reduce.forward(x.clone()));
        x + y
    }
}

#[derive(Module, Debug)]
struct Stage<B: Backend> {
    down: PatchDown<B>,
    blocks: Vec<ResidualBlock<B>>,
}

impl<B: Backend> Stage<B> {
    fn forward(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        let mut x = self.down.forward(x);
        for b in &self.blocks {
            x = b.forward(x);
        }
        x
    }
}

/// All-convolutional backbone producing the stride-8/16/32 pyramid.
#[derive(Module, Debug)]
pub struct Backbone<B: Backend> {
    stem: PatchDown<B>,
    stages: Vec<Stage<B>>,
}

impl<B: Backend> Backbone<B> {
    pub fn new(config: &BackboneConfig, device: &B::Device) -> Self {
        let slope = config.negative_slope;
        let stem = PatchDown::new(3, config.stem_channels, slope, device);
        let mut stages = Vec::new();
        let mut cin = config.stem_channels;
        for (&cout, &blocks) in config
            .stage_channels
            .iter()
            .zip(&config.blocks_per_stage)
        {
            let down = PatchDown::new(cin, cout, slope, device);
            let blocks = (0..blocks)
                .map(|_| ResidualBlock::new(cout, slope, device))
                .collect();
            stages.push(Stage { down, blocks });
            cin = cout;
        }
        Self { stem, stages }
    }

    /// `image` is `[batch, 3, H, W]` with H, W multiples of 32.
    pub fn forward(&self, image: Tensor<B, 4>) -> FeaturePyramid<B> {
        let [_, _, h, w] = image.dims();
        assert!(
            h % 32 == 0 && w % 32 == 0,
            "input {h}x{w} must be divisible by 32"
        );
        let mut x = self.stem.forward(image);
        let mut taps = Vec::with_capacity(3);
        for (i, stage) in self.stages.iter().enumerate() {
            x = stage.forward(x);
            if i >= 1 {
                taps.push(x.clone());
            }
        }
        let f_v1 = taps.pop().unwrap();
        let f_v2 = taps.pop().unwrap();
        let f_v3 = taps.pop().unwrap();
        FeaturePyramid { f_v1, f_v2, f_v3 }
    }
}
