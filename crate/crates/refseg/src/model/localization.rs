use burn::module::{Ignored, Module};
use burn::nn::conv::{Conv2d, Conv2dConfig};
use burn::nn::{LayerNorm, LayerNormConfig, Linear, LinearConfig};
use burn::tensor::activation::{relu, softmax};
use burn::tensor::backend::Backend;
use burn::tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::gemm::conv2d_gemm;
use super::pos_enc::positional_encoding_tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalizationMode {
    Filter,
    Transformer,
    /// Constant-zero logits (prior 0.5 everywhere); ablation only.
    None,
}

impl std::fmt::Display for LocalizationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Filter => "filter",
            Self::Transformer => "transformer",
            Self::None => "none",
        })
    }
}

impl std::str::FromStr for LocalizationMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "filter" => Ok(Self::Filter),
            "transformer" => Ok(Self::Transformer),
            "none" => Ok(Self::None),
            other => Err(crate::Error::Config(format!(
                "unknown localization mode {other:?} (expected filter|transformer|none)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalizationConfig {
    pub mode: LocalizationMode,
    pub n_filters: usize,
    /// Kernel / transformer model dimension.
    pub d_k: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub positional_encoding: bool,
}

impl LocalizationConfig {
    pub fn desk() -> Self {
        Self {
            mode: LocalizationMode::Filter,
            n_filters: 1,
            d_k: 64,
            heads: 4,
            ffn_hidden: 128,
            positional_encoding: true,
        }
    }

    pub fn paper_scale() -> Self {
        Self {
            mode: LocalizationMode::Filter,
            n_filters: 1,
            d_k: 1024,
            heads: 4,
            ffn_hidden: 1024,
            positional_encoding: true,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.n_filters < 1 {
            return Err(crate::Error::Config("n_filters must be >= 1".into()));
        }
        if self.d_k % self.heads != 0 {
            return Err(crate::Error::Config(format!(
                "heads ({}) must divide d_k ({})",
                self.heads, self.d_k
            )));
        }
        Ok(())
    }
}

/// The coarse heatmap over the stride-8 grid, stored as logits.
#[derive(Debug, Clone)]
pub struct PositionPrior<B: Backend> {
    /// `[batch, H/8, W/8]`
    pub logits: Tensor<B, 3>,
}

impl<B: Backend> PositionPrior<B> {
    /// sigmoid(logits), strictly inside (0, 1) for finite logits.
    pub fn prior(&self) -> Tensor<B, 3> {
        super::native_sigmoid(self.logits.clone())
    }
}

/// Per-location inner product with a language-generated kernel; exactly a
/// 1x1 convolution with a per-sample kernel.
pub fn relevance_filter<B: Backend>(kernel: Tensor<B, 2>, features: Tensor<B, 4>) -> Tensor<B, 3> {
    let [batch, d_k] = kernel.dims();
    let [fb, fc, h, w] = features.dims();
    assert_eq!(batch, fb, "batch mismatch");
    assert_eq!(d_k, fc, "kernel dim {d_k} vs feature channels {fc}");
    (features * kernel.reshape([batch, d_k, 1, 1]))
        .sum_dim(1)
        .reshape([batch, h, w])
}

#[derive(Module, Debug)]
struct MultiHeadAttention<B: Backend> {
    wq: Linear<B>,
    wk: Linear<B>,
    wv: Linear<B>,
    wo: Linear<B>,
    heads: Ignored<usize>,
}

impl<B: Backend> MultiHeadAttention<B> {
    fn new(d: usize, heads: usize, device: &B::Device) -> Self {
        Self {
            wq: LinearConfig::new(d, d).init(device),
            wk: LinearConfig::new(d, d).init(device),
            wv: LinearConfig::new(d, d).init(device),
            wo: LinearConfig::new(d, d).init(device),
            heads: Ignored(heads),
        }
    }

    fn forward(&self, q: Tensor<B, 3>, kv: Tensor<B, 3>) -> Tensor<B, 3> {
        let [b, n, d] = q.dims();
        let [_, m, _] = kv.dims();
        let heads = self.heads.0;
        let dh = d / heads;
        let split = |t: Tensor<B, 3>, len: usize| {
            t.reshape([b, len, heads, dh]).swap_dims(1, 2) // [b, heads, len, dh]
        };
        let qh = split(self.wq.forward(q), n);
        let kh = split(self.wk.forward(kv.clone()), m);
        let vh = split(self.wv.forward(kv), m);
        let scores = qh.matmul(kh.swap_dims(2, 3)) / (dh as f64).sqrt();
        let attn = softmax(scores, 3);
        let out = attn.matmul(vh).swap_dims(1, 2).reshape([b, n, d]);
        self.wo.forward(out)
    }
}

/// One post-norm transformer decoder layer over the flattened feature
/// grid, with the sentence vector as a single-element memory, plus a
/// per-position scalar head.
#[derive(Module, Debug)]
struct TransformerLocator<B: Backend> {
    in_proj: Linear<B>,
    mem_proj: Linear<B>,
    self_attn: MultiHeadAttention<B>,
    cross_attn: MultiHeadAttention<B>,
    norm1: LayerNorm<B>,
    norm2: LayerNorm<B>,
    norm3: LayerNorm<B>,
    ff1: Linear<B>,
    ff2: Linear<B>,
    head: Linear<B>,
}

impl<B: Backend> TransformerLocator<B> {
    fn new(d_f: usize, text_dim: usize, cfg: &LocalizationConfig, device: &B::Device) -> Self {
        let d = cfg.d_k;
        Self {
            in_proj: LinearConfig::new(d_f, d).init(device),
            mem_proj: LinearConfig::new(text_dim, d).init(device),
            self_attn: MultiHeadAttention::new(d, cfg.heads, device),
            cross_attn: MultiHeadAttention::new(d, cfg.heads, device),
            norm1: LayerNormConfig::new(d).init(device),
            norm2: LayerNormConfig::new(d).init(device),
            norm3: LayerNormConfig::new(d).init(device),
            ff1: LinearConfig::new(d, cfg.ffn_hidden).init(device),
            ff2: LinearConfig::new(cfg.ffn_hidden, d).init(device),
            head: LinearConfig::new(d, 1).init(device),
        }
    }

    /// `seq` is `[batch, n, d_f]`; `pe` is `[n, d]` when encodings are on.
    fn forward(
        &self,
        seq: Tensor<B, 3>,
        f_text: Tensor<B, 2>,
        pe: Option<Tensor<B, 2>>,
    ) -> Tensor<B, 2> {
        let x = self.in_proj.forward(seq);
        let [b, n, d] = x.dims();
        let mem = self.mem_proj.forward(f_text).reshape([b, 1, d]);
        let with_pe = |t: Tensor<B, 3>| match &pe {
            Some(p) => t + p.clone().reshape([1, n, d]),
            None => t,
        };
        let x1 = self
            .norm1
            .forward(x.clone() + self.self_attn.forward(with_pe(x.clone()), with_pe(x)));
        let x2 = self
            .norm2
            .forward(x1.clone() + self.cross_attn.forward(with_pe(x1), mem));
        let x3 = self
            .norm3
            .forward(x2.clone() + self.ff2.forward(relu(self.ff1.forward(x2))));
        self.head.forward(x3).reshape([b, n])
    }
}

/// Position-prior producer: relevance filtering (optionally cascaded) or
/// a transformer decoder, selected by the run mode.
#[derive(Module, Debug)]
pub struct Localizer<B: Backend> {
    proj_in: Conv2d<B>,
    kernels: Vec<Linear<B>>,
    reproj: Vec<Conv2d<B>>,
    transformer: TransformerLocator<B>,
    mode: Ignored<LocalizationMode>,
    positional_encoding: Ignored<bool>,
}

impl<B: Backend> Localizer<B> {
    pub fn new(
        cfg: &LocalizationConfig,
        d_f: usize,
        text_dim: usize,
        device: &B::Device,
    ) -> Self {
        let kernels = (0..cfg.n_filters)
            .map(|_| LinearConfig::new(text_dim, cfg.d_k).init(device))
            .collect();
        let reproj = (0..cfg.n_filters.saturating_sub(1))
            .map(|_| {
                Conv2dConfig::new([cfg.d_k + 1, cfg.d_k], [1, 1]).init(device)
            })
            .collect();
        Self {
            proj_in: Conv2dConfig::new([d_f, cfg.d_k], [1, 1]).init(device),
            kernels,
            reproj,
            transformer: TransformerLocator::new(d_f, text_dim, cfg, device),
            mode: Ignored(cfg.mode),
            positional_encoding: Ignored(cfg.positional_encoding),
        }
    }

    pub fn mode(&self) -> LocalizationMode {
        self.mode.0
    }

    pub fn set_mode(&mut self, mode: LocalizationMode) {
        self.mode = Ignored(mode);
    }

    pub fn set_positional_encoding(&mut self, enabled: bool) {
        self.positional_encoding = Ignored(enabled);
    }

    pub fn n_filters(&self) -> usize {
        self.kernels.len()
    }

    /// Language-guided kernel for cascade round `round`.
    pub fn make_kernel(&self, f_text: Tensor<B, 2>, round: usize) -> Tensor<B, 2> {
        self.kernels[round].forward(f_text)
    }

    /// Projects the cross-modal map to kernel channels.
    pub fn project_features(&self, f_m3: Tensor<B, 4>) -> Tensor<B, 4> {
        conv2d_gemm(&self.proj_in, f_m3)
    }

    fn filter_cascade(&self, f_m3: Tensor<B, 4>, f_text: Tensor<B, 2>) -> Tensor<B, 3> {
        let mut features = self.project_features(f_m3);
        let mut logits = relevance_filter(self.make_kernel(f_text.clone(), 0), features.clone());
        for round in 1..self.kernels.len() {
            let prior = super::native_sigmoid(logits.clone());
            let [b, h, w] = prior.dims();
            let cat = Tensor::cat(vec![features, prior.reshape([b, 1, h, w])], 1);
            features = conv2d_gemm(&self.reproj[round - 1], cat);
            logits = relevance_filter(self.make_kernel(f_text.clone(), round), features.clone());
        }
        logits
    }

    fn transformer_locate(&self, f_m3: Tensor<B, 4>, f_text: Tensor<B, 2>) -> Tensor<B, 3> {
        let [b, c, h, w] = f_m3.dims();
        let seq = f_m3.reshape([b, c, h * w]).swap_dims(1, 2); // [b, hw, c]
        let pe = if self.positional_encoding.0 {
            let d = self.transformer.in_proj.weight.dims()[1];
            Some(
                positional_encoding_tensor::<B>(h, w, d, &seq.device())
                    .expect("model dim is even"),
            )
        } else {
            None
        };
        self.transformer.forward(seq, f_text, pe).reshape([b, h, w])
    }

    pub fn forward(&self, f_m3: Tensor<B, 4>, f_text: Tensor<B, 2>) -> PositionPrior<B> {
        let [b, _, h, w] = f_m3.dims();
        let logits = match self.mode.0 {
            LocalizationMode::Filter => self.filter_cascade(f_m3, f_text),
            LocalizationMode::Transformer => self.transformer_locate(f_m3, f_text),
            LocalizationMode::None => Tensor::zeros([b, h, w], &f_m3.device()),
        };
        PositionPrior { logits }
    }
}
