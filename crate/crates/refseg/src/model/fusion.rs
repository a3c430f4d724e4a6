use burn::module::{Ignored, Module};
use burn::nn::conv::{Conv2d, Conv2dConfig};
use burn::nn::{Linear, LinearConfig};
use burn::tensor::activation::leaky_relu;
use burn::tensor::backend::Backend;
use burn::tensor::Tensor;

use super::backbone::FeaturePyramid;
use super::gemm::{conv2d_gemm, upsample2x_nearest};

#[derive(Debug, Clone)]
pub struct FusionConfig {
    /// Common projection width of every fusion level.
    pub d_f: usize,
    pub negative_slope: f64,
    /// When false, the sentence vector is swapped for a ones-vector and
    /// every level degrades to vision-only features of the same shape.
    pub enabled: bool,
}

impl FusionConfig {
    pub fn desk() -> Self {
        Self {
            d_f: 64,
            negative_slope: 0.1,
            enabled: true,
        }
    }

    pub fn paper_scale() -> Self {
        Self {
            d_f: 512,
            negative_slope: 0.1,
            enabled: true,
        }
    }
}

/// The ladder of cross-modal maps; intermediate levels are retained for
/// inspection and ablations.
#[derive(Debug, Clone)]
pub struct CrossModalFeature<B: Backend> {
    /// stride 32
    pub f_m1: Tensor<B, 4>,
    /// stride 16
    pub f_m2: Tensor<B, 4>,
    /// stride 8, the segmentation input
    pub f_m3: Tensor<B, 4>,
}

/// Gated multiplicative fusion at stride 32 followed by two
/// upsample-concat-project steps down to stride 8.
#[derive(Module, Debug)]
pub struct Fusion<B: Backend> {
    w_v1: Conv2d<B>,
    w_t: Linear<B>,
    w_m1: Conv2d<B>,
    w_v2: Conv2d<B>,
    proj2: Conv2d<B>,
    w_m2: Conv2d<B>,
    w_v3: Conv2d<B>,
    proj3: Conv2d<B>,
    slope: Ignored<f64>,
    enabled: Ignored<bool>,
}

fn conv1x1<B: Backend>(cin: usize, cout: usize, device: &B::Device) -> Conv2d<B> {
    Conv2dConfig::new([cin, cout], [1, 1]).init(device)
}

impl<B: Backend> Fusion<B> {
    pub fn new(
        config: &FusionConfig,
        text_dim: usize,
        taps: (usize, usize, usize),
        device: &B::Device,
    ) -> Self {
        let (d3, d2, d1) = taps;
        let d_f = config.d_f;
        Self {
            w_v1: conv1x1(d1, d_f, device),
            w_t: LinearConfig::new(text_dim, d_f).init(device),
            w_m1: conv1x1(d_f, d_f, device),
            w_v2: conv1x1(d2, d_f, device),
            proj2: conv1x1(2 * d_f, d_f, device),
            w_m2: conv1x1(d_f, d_f, device),
            w_v3: conv1x1(d3, d_f, device),
            proj3: conv1x1(2 * d_f, d_f, device),
            slope: Ignored(config.negative_slope),
            enabled: Ignored(config.enabled),
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

    /// Per-location elementwise product of the projected visual feature
    /// and the projected sentence vector.
    pub fn fuse_base(&self, f_v1: Tensor<B, 4>, f_text: Tensor<B, 2>) -> Tensor<B, 4> {
        let [batch, _] = f_text.dims();
        let f_text = if self.enabled.0 {
            f_text
        } else {
            f_text.ones_like()
        };
        let visual = self.g(conv2d_gemm(&self.w_v1, f_v1));
        let [_, d_f, _, _] = visual.dims();
        let textual = leaky_relu(self.w_t.forward(f_text), self.slope.0)
            .reshape([batch, d_f, 1, 1]);
        visual * textual
    }

    /// 2x nearest upsample of the previous level, concatenated with the
    /// projected pyramid level, then a 1x1 projection back to `d_f`.
    fn fuse_level(
        &self,
        prev: Tensor<B, 4>,
        f_v: Tensor<B, 4>,
        w_m: &Conv2d<B>,
        w_v: &Conv2d<B>,
        proj: &Conv2d<B>,
    ) -> Tensor<B, 4> {
        let [_, _, h, w] = f_v.dims();
        let [_, _, ph, pw] = prev.dims();
        assert!(
            h == 2 * ph && w == 2 * pw,
            "pyramid level {h}x{w} is not twice the previous {ph}x{pw}"
        );
        let up = upsample2x_nearest(prev);
        let cat = Tensor::cat(
            vec![self.g(conv2d_gemm(w_m, up)), self.g(conv2d_gemm(w_v, f_v))],
            1,
        );
        conv2d_gemm(proj, cat)
    }

    pub fn forward(
        &self,
        pyramid: &FeaturePyramid<B>,
        f_text: Tensor<B, 2>,
    ) -> CrossModalFeature<B> {
        let f_m1 = self.fuse_base(pyramid.f_v1.clone(), f_text);
        let f_m2 = self.fuse_level(
            f_m1.clone(),
            pyramid.f_v2.clone(),
            &self.w_m1,
            &self.w_v2,
            &self.proj2,
        );
        let f_m3 = self.fuse_level(
            f_m2.clone(),
            pyramid.f_v3.clone(),
            &self.w_m2,
            &self.w_v3,
            &self.proj3,
        );
        CrossModalFeature { f_m1, f_m2, f_m3 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use burn::tensor::Distribution;
    use crate::Infer as B;

    fn fusion(enabled: bool) -> Fusion<B> {
        <B as Backend>::seed(11);
        let cfg = FusionConfig {
            d_f: 8,
            negative_slope: 0.1,
            enabled,
        };
        Fusion::new(&cfg, 6, (4, 4, 4), &Default::default())
    }

    fn pyramid(batch: usize, cells: usize) -> FeaturePyramid<B> {
        let device = Default::default();
        FeaturePyramid {
            f_v1: Tensor::random([batch, 4, cells, cells], Distribution::Default, &device),
            f_v2: Tensor::random([batch, 4, cells * 2, cells * 2], Distribution::Default, &device),
            f_v3: Tensor::random([batch, 4, cells * 4, cells * 4], Distribution::Default, &device),
        }
    }

    /// Leaky ReLU + product oracle on hand values, slope 0.1:
    /// g((1,-1)) ⊙ g((2,2)) = (1,-0.1) ⊙ (2,2) = (2,-0.2)
    #[test]
    fn hand_evaluated_gate() {
        let device = Default::default();
        let vis = Tensor::<B, 4>::from_floats([[[[1.0f32]], [[-1.0]]]], &device);
        let txt = Tensor::<B, 2>::from_floats([[2.0f32, 2.0]], &device);
        let gated = leaky_relu(vis, 0.1) * leaky_relu(txt, 0.1).reshape([1, 2, 1, 1]);
        let got: Vec<f32> = gated.into_data().to_vec().unwrap();
        assert!((got[0] - 2.0).abs() < 1e-6);
        assert!((got[1] + 0.2).abs() < 1e-6);
    }

    #[test]
    fn zero_text_zero_bias_gives_zero_base() {
        let mut f = fusion(true);
        // zero the text projection bias so g(0 * W_t) = 0
        f.w_t.bias = f.w_t.bias.map(|b| b.map(|t| t.zeros_like()));
        let device = Default::default();
        let f_v1 = Tensor::<B, 4>::random([1, 4, 3, 3], Distribution::Default, &device);
        let f_text = Tensor::<B, 2>::zeros([1, 6], &device);
        let out = f.fuse_base(f_v1, f_text);
        assert_eq!(out.abs().max().into_scalar(), 0.0);
    }

    #[test]
    fn base_fusion_is_spatially_independent() {
        let f = fusion(true);
        let device = Default::default();
        let f_text = Tensor::<B, 2>::random([1, 6], Distribution::Default, &device);
        let a_in = Tensor::<B, 4>::random([1, 4, 3, 3], Distribution::Default, &device);
        let mut b_in: Vec<f32> = a_in.clone().into_data().to_vec().unwrap();
        // bump location (1, 1) in every channel
        for c in 0..4 {
            b_in[c * 9 + 4] += 1.0;
        }
        let b_in = Tensor::<B, 4>::from_data(
            burn::tensor::TensorData::new(b_in, [1, 4, 3, 3]),
            &device,
        );
        let a = f.fuse_base(a_in, f_text.clone());
        let b = f.fuse_base(b_in, f_text);
        let delta = (a - b).abs().sum_dim(1); // [1,1,3,3]
        let delta: Vec<f32> = delta.reshape([9]).into_data().to_vec().unwrap();
        for (i, d) in delta.iter().enumerate() {
            if i == 4 {
                assert!(*d > 0.0);
            } else {
                assert_eq!(*d, 0.0, "location {i} changed");
            }
        }
    }

    #[test]
    fn multiplicative_gating_scales_linearly() {
        let f = fusion(true);
        let device = Default::default();
        let f_v1 = Tensor::<B, 4>::random([1, 4, 2, 2], Distribution::Default, &device);
        let vis = leaky_relu(f.w_v1.forward(f_v1), 0.1);
        let gate = Tensor::<B, 4>::random([1, 8, 1, 1], Distribution::Uniform(0.1, 1.0), &device);
        let a = vis.clone() * gate.clone();
        let b = vis * (gate * 3.0);
        let ratio = (b / a).into_data().to_vec::<f32>().unwrap();
        assert!(ratio.iter().all(|r| (r - 3.0).abs() < 1e-4));
    }

    #[test]
    fn ladder_shapes() {
        let f = fusion(true);
        let device = Default::default();
        let p = pyramid(1, 13);
        let f_text = Tensor::<B, 2>::random([1, 6], Distribution::Default, &device);
        let out = f.forward(&p, f_text);
        assert_eq!(out.f_m1.dims(), [1, 8, 13, 13]);
        assert_eq!(out.f_m2.dims(), [1, 8, 26, 26]);
        assert_eq!(out.f_m3.dims(), [1, 8, 52, 52]);
    }

    #[test]
    fn nearest_upsample_replicates_source_cells() {
        let device = Default::default();
        let src = Tensor::<B, 4>::random([1, 2, 2, 2], Distribution::Default, &device);
        let up = upsample2x_nearest(src.clone());
        let s: Vec<f32> = src.into_data().to_vec().unwrap();
        let u: Vec<f32> = up.into_data().to_vec().unwrap();
        for c in 0..2 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(u[c * 16 + y * 4 + x], s[c * 4 + (y / 2) * 2 + x / 2]);
                }
            }
        }
    }

    #[test]
    fn disabled_fusion_is_expression_invariant() {
        let f = fusion(false);
        let device = Default::default();
        let p = pyramid(1, 4);
        let t1 = Tensor::<B, 2>::random([1, 6], Distribution::Default, &device);
        let t2 = Tensor::<B, 2>::random([1, 6], Distribution::Default, &device);
        let a = f.forward(&p, t1).f_m3;
        let b = f.forward(&p, t2).f_m3;
        assert_eq!(
            a.into_data().to_vec::<f32>().unwrap(),
            b.into_data().to_vec::<f32>().unwrap()
        );
    }

    #[test]
    fn forward_is_finite_and_nonconstant() {
        let f = fusion(true);
        let device = Default::default();
        let p = pyramid(1, 4);
        let t = Tensor::<B, 2>::random([1, 6], Distribution::Default, &device);
        let out: Vec<f32> = f.forward(&p, t).f_m3.into_data().to_vec().unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
        let min = out.iter().cloned().fold(f32::INFINITY, f32::min);
        let max = out.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert!(max > min);
    }
}
