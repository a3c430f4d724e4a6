use ndarray::{Array2, Array3};

/// Bilinear resize of an H×W×C image, half-pixel centers.
pub fn resize_bilinear(image: &Array3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (h, w, c) = image.dim();
    if (h, w) == (out_h, out_w) {
        return image.clone();
    }
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    let mut out = Array3::<f32>::zeros((out_h, out_w, c));
    for oy in 0..out_h {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f32;
        for ox in 0..out_w {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f32;
            for ch in 0..c {
                let top = image[[y0, x0, ch]] * (1.0 - wx) + image[[y0, x1, ch]] * wx;
                let bot = image[[y1, x0, ch]] * (1.0 - wx) + image[[y1, x1, ch]] * wx;
                out[[oy, ox, ch]] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}

/// Bilinear resize of a 2-D map, half-pixel centers.
pub fn resize_bilinear_2d(map: &Array2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (h, w) = map.dim();
    if (h, w) == (out_h, out_w) {
        return map.clone();
    }
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f32;
        let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
        let x0 = fx.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let wx = fx - x0 as f32;
        let top = map[[y0, x0]] * (1.0 - wx) + map[[y0, x1]] * wx;
        let bot = map[[y1, x0]] * (1.0 - wx) + map[[y1, x1]] * wx;
        top * (1.0 - wy) + bot * wy
    })
}

/// Nearest-neighbor resize of a 2-D map. Each output cell samples the
/// source pixel at `floor(dst * src_len / dst_len)`, so integer-factor
/// downsampling reads the top-left corner of each block and binary masks
/// stay binary.
pub fn resize_nearest<T: Copy>(map: &Array2<T>, out_h: usize, out_w: usize) -> Array2<T> {
    let (h, w) = map.dim();
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let sy = (oy * h / out_h).min(h - 1);
        let sx = (ox * w / out_w).min(w - 1);
        map[[sy, sx]]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_preserves_binary_values() {
        let mask = Array2::from_shape_fn((8, 8), |(y, x)| ((x + y) % 2) as u8);
        let up = resize_nearest(&mask, 13, 17);
        assert!(up.iter().all(|&v| v == 0 || v == 1));
    }

    #[test]
    fn nearest_identity() {
        let mask = Array2::from_shape_fn((6, 6), |(y, x)| ((x * y) % 2) as u8);
        assert_eq!(resize_nearest(&mask, 6, 6), mask);
    }

    #[test]
    fn nearest_upsample_replicates_blocks() {
        let mut m = Array2::<u8>::zeros((2, 2));
        m[[0, 1]] = 1;
        let up = resize_nearest(&m, 4, 4);
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(up[[y, x]], m[[y / 2, x / 2]]);
            }
        }
    }

    #[test]
    fn bilinear_constant_image_stays_constant() {
        let img = Array3::from_elem((16, 12, 3), 0.25f32);
        let out = resize_bilinear(&img, 7, 9);
        assert!(out.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn bilinear_identity() {
        let img = Array3::from_shape_fn((5, 4, 3), |(y, x, c)| (y * 12 + x * 3 + c) as f32);
        let out = resize_bilinear(&img, 5, 4);
        assert_eq!(out, img);
    }
}
