//! Heatmap and mask rendering for the predict command.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::{Array2, Array3};

use crate::data::{resize_bilinear_2d, resize_nearest};
use crate::Result;

/// Overlay tint for predicted masks.
pub const MASK_COLOR: [u8; 3] = [255, 0, 0];

/// Blue-to-red ramp through green, for heatmap values in [0, 1].
pub fn colormap(v: f32) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (v * 2.0 - 1.0).clamp(0.0, 1.0);
    let b = (1.0 - v * 2.0).clamp(0.0, 1.0);
    let g = 1.0 - r - b;
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

fn to_rgb(image: &Array3<f32>) -> RgbImage {
    let (h, w, _) = image.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| (image[(y as usize, x as usize, c)].clamp(0.0, 1.0) * 255.0) as u8;
        Rgb([px(0), px(1), px(2)])
    })
}

/// Grayscale rendering of a [0, 1] map at its native resolution scaled to
/// the given size.
pub fn render_probability(map: &Array2<f32>, out_h: usize, out_w: usize) -> RgbImage {
    let scaled = resize_bilinear_2d(map, out_h, out_w);
    RgbImage::from_fn(out_w as u32, out_h as u32, |x, y| {
        let v = (scaled[(y as usize, x as usize)].clamp(0.0, 1.0) * 255.0) as u8;
        Rgb([v, v, v])
    })
}

/// Colormapped heatmap blended over the source image. The map is upscaled
/// with nearest neighbor so the brightest pixel block matches the argmax
/// cell.
pub fn render_heatmap_overlay(image: &Array3<f32>, map: &Array2<f32>, alpha: f32) -> RgbImage {
    let (h, w, _) = image.dim();
    let scaled = resize_nearest(map, h, w);
    let mut out = to_rgb(image);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let heat = colormap(scaled[(y as usize, x as usize)]);
        for c in 0..3 {
            px.0[c] =
                ((1.0 - alpha) * px.0[c] as f32 + alpha * heat[c] as f32).round() as u8;
        }
    }
    out
}

/// Source image with mask pixels replaced by a fixed blend toward
/// [`MASK_COLOR`]; background pixels are untouched.
pub fn render_mask_overlay(image: &Array3<f32>, mask: &Array2<u8>, alpha: f32) -> RgbImage {
    let mut out = to_rgb(image);
    for (x, y, px) in out.enumerate_pixels_mut() {
        if mask[(y as usize, x as usize)] > 0 {
            for c in 0..3 {
                px.0[c] = ((1.0 - alpha) * px.0[c] as f32 + alpha * MASK_COLOR[c] as f32)
                    .round() as u8;
            }
        }
    }
    out
}

/// Writes `{stem}_prior.png`, `{stem}_mask.png` and `{stem}_prob.png`
/// into `out_dir` and returns the three paths.
pub fn save_prediction(
    out_dir: &Path,
    stem: &str,
    image: &Array3<f32>,
    prior: &Array2<f32>,
    prob: &Array2<f32>,
    mask: &Array2<u8>,
) -> Result<[PathBuf; 3]> {
    std::fs::create_dir_all(out_dir)?;
    let (h, w, _) = image.dim();
    let prior_path = out_dir.join(format!("{stem}_prior.png"));
    let mask_path = out_dir.join(format!("{stem}_mask.png"));
    let prob_path = out_dir.join(format!("{stem}_prob.png"));
    let save = |img: RgbImage, path: &PathBuf| -> Result<()> {
        img.save(path)
            .map_err(|e| crate::Error::Runtime(format!("write {}: {e}", path.display())))
    };
    save(render_heatmap_overlay(image, prior, 0.5), &prior_path)?;
    save(render_mask_overlay(image, mask, 0.5), &mask_path)?;
    save(render_probability(prob, h, w), &prob_path)?;
    Ok([prior_path, mask_path, prob_path])
}
