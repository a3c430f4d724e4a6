//! Matmul-based convolution kernels.
//!
//! The ndarray backend ships dedicated convolution kernels whose reverse
//! pass is far slower than the forward pass, which makes training on CPU
//! impractical. The helpers here express the same convolutions through
//! padding, slicing, concatenation, and batched matmul, so both passes
//! stay inside the backend's fast matmul path. They reuse the parameters
//! of the standard `Conv2d` / `ConvTranspose2d` modules, so checkpoints
//! and initializers are unaffected.

use burn::nn::conv::{Conv2d, ConvTranspose2d};
use burn::nn::PaddingConfig2d;
use burn::tensor::backend::Backend;
use burn::tensor::Tensor;

/// Applies `conv` to `x` using the matmul formulation.
///
/// Supports square kernels, symmetric stride and dilation, groups of 1,
/// and explicit or "same" padding. Stride greater than one requires the
/// padded output extent to be divisible by the stride.
pub fn conv2d_gemm<B: Backend>(conv: &Conv2d<B>, x: Tensor<B, 4>) -> Tensor<B, 4> {
    let weight = conv.weight.val();
    let [cout, cin, kh, kw] = weight.dims();
    let [batch, xc, h, w] = x.dims();
    assert_eq!(cin, xc, "conv2d_gemm: channel mismatch");
    assert_eq!(kh, kw, "conv2d_gemm: kernel must be square");
    assert_eq!(conv.groups, 1, "conv2d_gemm: grouped conv unsupported");
    let k = kh;
    let stride = conv.stride[0];
    assert_eq!(conv.stride, [stride; 2], "conv2d_gemm: stride must be symmetric");
    let dilation = conv.dilation[0];
    assert_eq!(
        conv.dilation,
        [dilation; 2],
        "conv2d_gemm: dilation must be symmetric"
    );
    let pad = match conv.padding.0 {
        PaddingConfig2d::Explicit(py, px) => {
            assert_eq!(py, px, "conv2d_gemm: padding must be symmetric");
            py
        }
        PaddingConfig2d::Valid => 0,
        PaddingConfig2d::Same => dilation * (k - 1) / 2,
    };

    let x = if pad > 0 {
        x.pad((pad, pad, pad, pad), 0.0)
    } else {
        x
    };
    let span = dilation * (k - 1);
    let out_h = h + 2 * pad - span;
    let out_w = w + 2 * pad - span;

    // Columns ordered as (ky, kx, cin) to match the permuted weight below.
    let full = if k == 1 {
        x
    } else {
        let mut shifts = Vec::with_capacity(k * k);
        for ky in 0..k {
            for kx in 0..k {
                let oy = ky * dilation;
                let ox = kx * dilation;
                shifts.push(x.clone().slice([
                    0..batch,
                    0..cin,
                    oy..oy + out_h,
                    ox..ox + out_w,
                ]));
            }
        }
        Tensor::cat(shifts, 1)
    };
    let full = full.reshape([batch, k * k * cin, out_h * out_w]);
    let w_mat = weight
        .swap_dims(1, 2)
        .swap_dims(2, 3)
        .reshape([1, cout, k * k * cin]);
    let mut y = w_mat
        .matmul(full)
        .reshape([batch, cout, out_h, out_w]);
    if stride > 1 {
        assert!(
            out_h % stride == 0 && out_w % stride == 0,
            "conv2d_gemm: output extent not divisible by stride"
        );
        y = y
            .reshape([batch, cout, out_h / stride, stride, out_w / stride, stride])
            .slice([
                0..batch,
                0..cout,
                0..out_h / stride,
                0..1,
                0..out_w / stride,
                0..1,
            ])
            .reshape([batch, cout, out_h / stride, out_w / stride]);
    }
    match &conv.bias {
        Some(bias) => y + bias.val().reshape([1, cout, 1, 1]),
        None => y,
    }
}

/// Applies a 2x2 stride-2 transposed convolution using the matmul
/// formulation, doubling the spatial extent.
pub fn deconv2x2_gemm<B: Backend>(deconv: &ConvTranspose2d<B>, x: Tensor<B, 4>) -> Tensor<B, 4> {
    let weight = deconv.weight.val();
    let [cin, cout, kh, kw] = weight.dims();
    assert_eq!([kh, kw], [2, 2], "deconv2x2_gemm: kernel must be 2x2");
    assert_eq!(deconv.stride, [2, 2], "deconv2x2_gemm: stride must be 2");
    assert_eq!(deconv.padding, [0, 0], "deconv2x2_gemm: padding unsupported");
    let [batch, xc, h, w] = x.dims();
    assert_eq!(cin, xc, "deconv2x2_gemm: channel mismatch");

    let flat = x.reshape([batch, cin, h * w]);
    let mut rows = Vec::with_capacity(2);
    for ky in 0..2 {
        let mut cols = Vec::with_capacity(2);
        for kx in 0..2 {
            let w_tap = weight
                .clone()
                .slice([0..cin, 0..cout, ky..ky + 1, kx..kx + 1])
                .reshape([cin, cout])
                .transpose()
                .reshape([1, cout, cin]);
            cols.push(
                w_tap
                    .matmul(flat.clone())
                    .reshape([batch, cout, h, w]),
            );
        }
        rows.push(Tensor::stack::<5>(cols, 4));
    }
    let y = Tensor::stack::<6>(rows, 3).reshape([batch, cout, 2 * h, 2 * w]);
    match &deconv.bias {
        Some(bias) => y + bias.val().reshape([1, cout, 1, 1]),
        None => y,
    }
}

/// Doubles the spatial extent of a feature map by nearest-neighbour
/// repetition, expressed with reshape and broadcast so the reverse pass
/// is a plain sum.
pub fn upsample2x_nearest<B: Backend>(x: Tensor<B, 4>) -> Tensor<B, 4> {
    let [batch, c, h, w] = x.dims();
    x.reshape([batch, c, h, 1, w, 1])
        .expand([batch, c, h, 2, w, 2])
        .reshape([batch, c, 2 * h, 2 * w])
}
