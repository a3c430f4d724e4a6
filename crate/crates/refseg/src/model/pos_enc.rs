use burn::tensor::backend::Backend;
use burn::tensor::{Tensor, TensorData};

use crate::error::{Error, Result};

/// Fixed 2-D sinusoidal positional encoding: the first `d/2` channels
/// encode the row index, the rest the column index, each axis with the
/// standard sin/cos frequency ladder. Returns `h * w` rows of dimension
/// `d`, flattened row-major (row index varies slowest).
pub fn positional_encoding_2d(h: usize, w: usize, d: usize) -> Result<Vec<f32>> {
    if d % 2 != 0 {
        return Err(Error::Config(format!(
            "positional encoding dimension {d} must be even"
        )));
    }
    let half = d / 2;
    let axis = |pos: usize, i: usize| -> f32 {
        let even = i - i % 2;
        let denom = 10000f64.powf(even as f64 / half as f64);
        let angle = pos as f64 / denom;
        if i % 2 == 0 {
            angle.sin() as f32
        } else {
            angle.cos() as f32
        }
    };
    let mut out = Vec::with_capacity(h * w * d);
    for y in 0..h {
        for x in 0..w {
            for i in 0..half {
                out.push(axis(y, i));
            }
            for i in 0..half {
                out.push(axis(x, i));
            }
        }
    }
    Ok(out)
}

/// Tensor view of [`positional_encoding_2d`], shape `[h * w, d]`.
pub fn positional_encoding_tensor<B: Backend>(
    h: usize,
    w: usize,
    d: usize,
    device: &B::Device,
) -> Result<Tensor<B, 2>> {
    let data = positional_encoding_2d(h, w, d)?;
    Ok(Tensor::from_data(TensorData::new(data, [h * w, d]), device))
}
