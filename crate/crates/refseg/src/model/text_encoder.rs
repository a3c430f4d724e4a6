use burn::module::{Ignored, Module, Param};
use burn::nn::{Linear, LinearConfig};
use burn::tensor::activation::{sigmoid, tanh};
use burn::tensor::backend::Backend;
use burn::tensor::{Distribution, Int, Tensor, TensorData};

use crate::data::{TokenSequence, Vocabulary};
use crate::error::{Error, Result};

/// Word embedding dimensionality.
pub const EMBED_DIM: usize = 300;

#[derive(Debug, Clone)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    /// Hidden units per direction.
    pub hidden_dim: usize,
    pub max_len: usize,
}

/// Per-word hidden states plus the pooled sentence vector.
#[derive(Debug, Clone)]
pub struct TextEncoding<B: Backend> {
    /// `[batch, max_len, 2 * hidden_dim]`; rows at positions >= the true
    /// length are zero.
    pub hidden: Tensor<B, 3>,
    /// `[batch, 2 * hidden_dim]`, mean of the first `m` hidden rows.
    pub f_text: Tensor<B, 2>,
    pub lengths: Vec<usize>,
}

/// Single GRU cell: reset/update gates with sigmoid, tanh candidate.
#[derive(Module, Debug)]
pub struct GruCell<B: Backend> {
    ih: Linear<B>,
    hh: Linear<B>,
    hidden_dim: Ignored<usize>,
}

impl<B: Backend> GruCell<B> {
    pub fn new(input_dim: usize, hidden_dim: usize, bias: bool, device: &B::Device) -> Self {
        Self {
            ih: LinearConfig::new(input_dim, 3 * hidden_dim)
                .with_bias(bias)
                .init(device),
            hh: LinearConfig::new(hidden_dim, 3 * hidden_dim)
                .with_bias(bias)
                .init(device),
            hidden_dim: Ignored(hidden_dim),
        }
    }

    /// One recurrence step: `x` is `[batch, input_dim]`, `h` is
    /// `[batch, hidden_dim]`.
    pub fn step(&self, x: Tensor<B, 2>, h: Tensor<B, 2>) -> Tensor<B, 2> {
        let gi = self.ih.forward(x).chunk(3, 1);
        let gh = self.hh.forward(h.clone()).chunk(3, 1);
        let reset = sigmoid(gi[0].clone() + gh[0].clone());
        let update = sigmoid(gi[1].clone() + gh[1].clone());
        let candidate = tanh(gi[2].clone() + reset * gh[2].clone());
        (update.ones_like() - update.clone()) * candidate + update * h
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim.0
    }
}

/// Bi-directional GRU over embedded tokens with masked mean pooling.
#[derive(Module, Debug)]
pub struct TextEncoder<B: Backend> {
    embedding: Param<Tensor<B, 2>>,
    forward_cell: GruCell<B>,
    backward_cell: GruCell<B>,
    hidden_dim: Ignored<usize>,
    max_len: Ignored<usize>,
}

impl<B: Backend> TextEncoder<B> {
    pub fn new(config: &TextEncoderConfig, device: &B::Device) -> Self {
        let table = Tensor::<B, 2>::random(
            [config.vocab_size, EMBED_DIM],
            Distribution::Uniform(-0.08, 0.08),
            device,
        );
        // padding row stays zero
        let table = table.slice_assign(
            [0..1, 0..EMBED_DIM],
            Tensor::zeros([1, EMBED_DIM], device),
        );
        Self {
            embedding: Param::from_tensor(table),
            forward_cell: GruCell::new(EMBED_DIM, config.hidden_dim, true, device),
            backward_cell: GruCell::new(EMBED_DIM, config.hidden_dim, true, device),
            hidden_dim: Ignored(config.hidden_dim),
            max_len: Ignored(config.max_len),
        }
    }

    /// Replaces embedding rows with vectors from a plain-text
    /// "token v1 .. v300" file. Tokens absent from the file keep their
    /// random initialization; the padding row stays zero.
    pub fn load_embeddings(mut self, path: &std::path::Path, vocab: &Vocabulary) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let device = self.embedding.device();
        let mut table = self.embedding.val();
        for (lineno, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<f32> = parts
                .map(|v| v.parse::<f32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("embedding line {}: {e}", lineno + 1)))?;
            if values.len() != EMBED_DIM {
                return Err(Error::Data(format!(
                    "embedding line {}: expected {EMBED_DIM} values, got {}",
                    lineno + 1,
                    values.len()
                )));
            }
            let idx = vocab.lookup(token);
            if idx <= crate::data::UNK && vocab.token(idx).map(|t| t != token).unwrap_or(true) {
                continue;
            }
            let row = Tensor::<B, 1>::from_data(TensorData::new(values, [EMBED_DIM]), &device);
            table = table.slice_assign([idx..idx + 1, 0..EMBED_DIM], row.unsqueeze_dim(0));
        }
        self.embedding = Param::from_tensor(table);
        Ok(self)
    }

    pub fn max_len(&self) -> usize {
        self.max_len.0
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim.0
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.dims()[0]
    }

    /// Table lookup: `[batch, max_len]` indices to `[batch, max_len, 300]`.
    pub fn embed(&self, tokens: &[TokenSequence]) -> Tensor<B, 3> {
        let batch = tokens.len();
        let max_len = self.max_len.0;
        let device = self.embedding.device();
        let flat: Vec<i32> = tokens
            .iter()
            .flat_map(|t| t.indices.iter().map(|&i| i as i32))
            .collect();
        let indices =
            Tensor::<B, 1, Int>::from_data(TensorData::new(flat, [batch * max_len]), &device);
        self.embedding
            .val()
            .select(0, indices)
            .reshape([batch, max_len, EMBED_DIM])
    }

    /// Runs both GRU directions and pools. Padded positions never touch
    /// the recurrent state and are zero in the output.
    pub fn forward(&self, tokens: &[TokenSequence]) -> TextEncoding<B> {
        let batch = tokens.len();
        let max_len = self.max_len.0;
        let hid = self.hidden_dim.0;
        let device = self.embedding.device();
        let embedded = self.embed(tokens);
        let lengths: Vec<usize> = tokens.iter().map(|t| t.true_length).collect();

        let step_mask = |t: usize| -> Tensor<B, 2> {
            let data: Vec<f32> = lengths
                .iter()
                .map(|&m| if t < m { 1.0 } else { 0.0 })
                .collect();
            Tensor::from_data(TensorData::new(data, [batch, 1]), &device)
        };
        let x_at = |t: usize| -> Tensor<B, 2> {
            embedded
                .clone()
                .slice([0..batch, t..t + 1, 0..EMBED_DIM])
                .reshape([batch, EMBED_DIM])
        };

        let mut fwd_states: Vec<Tensor<B, 2>> = Vec::with_capacity(max_len);
        let mut h = Tensor::<B, 2>::zeros([batch, hid], &device);
        for t in 0..max_len {
            let m = step_mask(t);
            let next = self.forward_cell.step(x_at(t), h.clone());
            h = next * m.clone() + h * (m.ones_like() - m.clone());
            fwd_states.push(h.clone() * m);
        }

        let mut bwd_states: Vec<Tensor<B, 2>> = vec![Tensor::zeros([1, 1], &device); max_len];
        let mut h = Tensor::<B, 2>::zeros([batch, hid], &device);
        for t in (0..max_len).rev() {
            let m = step_mask(t);
            let next = self.backward_cell.step(x_at(t), h.clone());
            h = next * m.clone() + h * (m.ones_like() - m.clone());
            bwd_states[t] = h.clone() * m;
        }

        let rows: Vec<Tensor<B, 2>> = fwd_states
            .into_iter()
            .zip(bwd_states)
            .map(|(f, b)| Tensor::cat(vec![f, b], 1))
            .collect();
        let hidden = Tensor::stack::<3>(rows, 1);
        let f_text = pool(hidden.clone(), &lengths);
        TextEncoding {
            hidden,
            f_text,
            lengths,
        }
    }
}

/// Masked mean over the first `m` rows of each sequence.
pub fn pool<B: Backend>(hidden: Tensor<B, 3>, lengths: &[usize]) -> Tensor<B, 2> {
    let [batch, _, dim] = hidden.dims();
    let device = hidden.device();
    let inv: Vec<f32> = lengths.iter().map(|&m| 1.0 / m.max(1) as f32).collect();
    let inv = Tensor::<B, 2>::from_data(TensorData::new(inv, [batch, 1]), &device);
    // padded rows are zero, so the plain sum is the masked sum
    hidden.sum_dim(1).reshape([batch, dim]) * inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, tokenize};
    use crate::Infer as B;

    fn small_encoder(vocab_size: usize, hidden: usize, max_len: usize) -> TextEncoder<B> {
        <B as Backend>::seed(42);
        TextEncoder::new(
            &TextEncoderConfig {
                vocab_size,
                hidden_dim: hidden,
                max_len,
            },
            &Default::default(),
        )
    }

    fn seq(indices: Vec<usize>, m: usize) -> TokenSequence {
        TokenSequence {
            indices,
            true_length: m,
        }
    }

    #[test]
    fn embed_all_padding_is_zero() {
        let enc = small_encoder(6, 4, 3);
        // true_length is irrelevant to embed(); all-pad indices hit row 0
        let out = enc.embed(&[seq(vec![0, 0, 0], 1)]);
        let max = out.abs().max().into_scalar();
        assert_eq!(max, 0.0);
    }

    #[test]
    fn embed_is_row_lookup() {
        let enc = small_encoder(6, 4, 2);
        let out = enc.embed(&[seq(vec![2, 3], 2)]);
        let table = enc.embedding.val();
        let row2 = table.clone().slice([2..3, 0..EMBED_DIM]).reshape([EMBED_DIM]);
        let got2 = out
            .clone()
            .slice([0..1, 0..1, 0..EMBED_DIM])
            .reshape([EMBED_DIM]);
        let diff = (row2 - got2).abs().max().into_scalar();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn perturbing_one_row_changes_only_matching_tokens() {
        let enc = small_encoder(6, 4, 4);
        let tokens = [seq(vec![2, 3, 2, 5], 4)];
        let before = enc.embed(&tokens);
        let mut enc2 = enc.clone();
        let table = enc2.embedding.val();
        let bumped = table.clone().slice_assign(
            [3..4, 0..EMBED_DIM],
            table.slice([3..4, 0..EMBED_DIM]) + 1.0,
        );
        enc2.embedding = Param::from_tensor(bumped);
        let after = enc2.embed(&tokens);
        let delta = (after - before).abs().sum_dim(2); // [1, 4, 1]
        let delta: Vec<f32> = delta.reshape([4]).into_data().to_vec().unwrap();
        assert_eq!(delta[0], 0.0);
        assert!(delta[1] > 0.0);
        assert_eq!(delta[2], 0.0);
        assert_eq!(delta[3], 0.0);
    }

    #[test]
    fn zero_input_zero_bias_step_is_zero() {
        <B as Backend>::seed(1);
        let cell: GruCell<B> = GruCell::new(8, 4, false, &Default::default());
        let x = Tensor::zeros([2, 8], &Default::default());
        let h = Tensor::zeros([2, 4], &Default::default());
        let out = cell.step(x, h);
        assert_eq!(out.abs().max().into_scalar(), 0.0);
    }

    /// Scalar GRU step oracle operating on raw weight values.
    fn gru_step_oracle(
        wi: &[f32], // [in, 3h] row-major
        bi: &[f32],
        wh: &[f32], // [h, 3h]
        bh: &[f32],
        x: &[f32],
        h: &[f32],
        hid: usize,
    ) -> Vec<f32> {
        let input = x.len();
        let lin = |w: &[f32], b: &[f32], v: &[f32], rows: usize, g: usize, j: usize| -> f32 {
            let col = g * hid + j;
            let mut acc = b[col];
            for r in 0..rows {
                acc += v[r] * w[r * 3 * hid + col];
            }
            acc
        };
        let sig = |v: f32| 1.0 / (1.0 + (-v).exp());
        (0..hid)
            .map(|j| {
                let r = sig(lin(wi, bi, x, input, 0, j) + lin(wh, bh, h, hid, 0, j));
                let z = sig(lin(wi, bi, x, input, 1, j) + lin(wh, bh, h, hid, 1, j));
                let n = (lin(wi, bi, x, input, 2, j) + r * lin(wh, bh, h, hid, 2, j)).tanh();
                (1.0 - z) * n + z * h[j]
            })
            .collect()
    }

    #[test]
    fn step_matches_scalar_oracle() {
        <B as Backend>::seed(5);
        let device = Default::default();
        let cell: GruCell<B> = GruCell::new(3, 2, true, &device);
        let x = Tensor::<B, 2>::random([1, 3], Distribution::Default, &device);
        let h = Tensor::<B, 2>::random([1, 2], Distribution::Default, &device);
        let got: Vec<f32> = cell
            .step(x.clone(), h.clone())
            .into_data()
            .to_vec()
            .unwrap();
        let wi: Vec<f32> = cell.ih.weight.val().into_data().to_vec().unwrap();
        let bi: Vec<f32> = cell.ih.bias.clone().unwrap().val().into_data().to_vec().unwrap();
        let wh: Vec<f32> = cell.hh.weight.val().into_data().to_vec().unwrap();
        let bh: Vec<f32> = cell.hh.bias.clone().unwrap().val().into_data().to_vec().unwrap();
        let xv: Vec<f32> = x.into_data().to_vec().unwrap();
        let hv: Vec<f32> = h.into_data().to_vec().unwrap();
        let want = gru_step_oracle(&wi, &bi, &wh, &bh, &xv, &hv, 2);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-5, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn single_token_hidden_is_one_step_of_each_direction() {
        let enc = small_encoder(6, 4, 3);
        let tokens = [seq(vec![2, 0, 0], 1)];
        let enc_out = enc.forward(&tokens);
        let x = enc.embed(&tokens).slice([0..1, 0..1, 0..EMBED_DIM]).reshape([1, EMBED_DIM]);
        let device = x.device();
        let zero = Tensor::zeros([1, 4], &device);
        let f = enc.forward_cell.step(x.clone(), zero.clone());
        let b = enc.backward_cell.step(x, zero);
        let want = Tensor::cat(vec![f, b], 1);
        let got = enc_out.hidden.clone().slice([0..1, 0..1, 0..8]).reshape([1, 8]);
        assert!((got - want).abs().max().into_scalar() < 1e-6);
        // rows beyond m are zero
        let tail = enc_out
            .hidden
            .clone()
            .slice([0..1, 1..3, 0..8])
            .abs()
            .max()
            .into_scalar();
        assert_eq!(tail, 0.0);
        // f_text of a single-word sequence equals its hidden row
        let row0 = enc_out
            .hidden
            .clone()
            .slice([0..1, 0..1, 0..8])
            .reshape([1, 8]);
        let diff = (enc_out.f_text - row0).abs().max().into_scalar();
        assert!(diff < 1e-6);
    }

    #[test]
    fn pool_is_masked_mean() {
        let device = Default::default();
        let hidden = Tensor::<B, 3>::from_data(
            TensorData::new(
                vec![1.0f32, 2.0, 3.0, 4.0, 0.0, 0.0], // two rows + one pad row
                [1, 3, 2],
            ),
            &device,
        );
        let out: Vec<f32> = pool(hidden, &[2]).into_data().to_vec().unwrap();
        assert_eq!(out, vec![2.0, 3.0]);
    }

    #[test]
    fn pool_matches_bruteforce_mean() {
        let enc = small_encoder(8, 4, 5);
        let tokens = [seq(vec![2, 3, 4, 5, 6], 5)];
        let out = enc.forward(&tokens);
        let rows: Vec<f32> = out.hidden.clone().into_data().to_vec().unwrap();
        let dim = 8;
        let mut mean = vec![0.0f32; dim];
        for t in 0..5 {
            for d in 0..dim {
                mean[d] += rows[t * dim + d] / 5.0;
            }
        }
        let got: Vec<f32> = out.f_text.into_data().to_vec().unwrap();
        for (g, w) in got.iter().zip(&mean) {
            assert!((g - w).abs() < 1e-5);
        }
    }

    #[test]
    fn appending_padding_leaves_f_text_unchanged() {
        let enc = small_encoder(8, 4, 6);
        let a = enc.forward(&[seq(vec![2, 3, 4, 0, 0, 0], 3)]);
        let b = enc.forward(&[seq(vec![2, 3, 4, 0, 0, 0], 3)]);
        assert_eq!(
            a.f_text.clone().into_data().to_vec::<f32>().unwrap(),
            b.f_text.into_data().to_vec::<f32>().unwrap()
        );
        // extra pad positions do not leak into the state
        let c = enc.forward(&[seq(vec![2, 3, 4, 7, 7, 7], 3)]);
        let diff = (a.f_text - c.f_text).abs().max().into_scalar();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn forward_direction_is_causal() {
        let enc = small_encoder(10, 4, 4);
        let a = enc.forward(&[seq(vec![2, 3, 4, 5], 4)]);
        let b = enc.forward(&[seq(vec![2, 3, 9, 5], 4)]);
        // forward half of rows 0..2 unchanged when token 2 changes
        for t in 0..2 {
            let fa = a.hidden.clone().slice([0..1, t..t + 1, 0..4]);
            let fb = b.hidden.clone().slice([0..1, t..t + 1, 0..4]);
            assert_eq!((fa - fb).abs().max().into_scalar(), 0.0, "t={t}");
        }
        // backward half of row 3 unchanged
        let ba = a.hidden.clone().slice([0..1, 3..4, 4..8]);
        let bb = b.hidden.clone().slice([0..1, 3..4, 4..8]);
        assert_eq!((ba - bb).abs().max().into_scalar(), 0.0);
    }

    #[test]
    fn paper_scale_output_dim() {
        let corpus = vec!["the red circle".to_string()];
        let vocab = build_vocab(&corpus, 1).unwrap();
        let enc = small_encoder(vocab.len(), 1024, 15);
        let seq = tokenize("the red circle", &vocab, 15).unwrap();
        let out = enc.forward(&[seq]);
        assert_eq!(out.hidden.dims(), [1, 15, 2048]);
        assert_eq!(out.f_text.dims(), [1, 2048]);
    }
}
