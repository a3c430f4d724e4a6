use ndarray::{Array2, Array3};

use super::resize::{resize_bilinear, resize_nearest};
use super::vocab::{tokenize, TokenSequence, Vocabulary};
use crate::error::{Error, Result};

/// One training/evaluation unit: an image in `[0, 1]`, the referring
/// expression, and the ground-truth binary mask of the referred object.
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub image: Array3<f32>,
    pub expression: String,
    pub gt_mask: Array2<u8>,
    pub tokens: Option<TokenSequence>,
}

impl ImageSample {
    /// Validates the sample invariants: matching spatial dimensions that
    /// are multiples of 32, and a non-empty binary mask.
    pub fn new(image: Array3<f32>, expression: String, gt_mask: Array2<u8>) -> Result<Self> {
        let (h, w, c) = image.dim();
        if c != 3 {
            return Err(Error::Data(format!("image must have 3 channels, got {c}")));
        }
        if gt_mask.dim() != (h, w) {
            return Err(Error::Data(format!(
                "mask shape {:?} does not match image {h}x{w}",
                gt_mask.dim()
            )));
        }
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Data(format!(
                "sample dimensions {h}x{w} must be multiples of 32"
            )));
        }
        if gt_mask.iter().any(|&v| v > 1) {
            return Err(Error::Data("mask contains values outside {0,1}".into()));
        }
        if !gt_mask.iter().any(|&v| v == 1) {
            return Err(Error::Data("mask has no foreground pixels".into()));
        }
        Ok(Self {
            image,
            expression,
            gt_mask,
            tokens: None,
        })
    }

    pub fn with_tokens(mut self, vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        self.tokens = Some(tokenize(&self.expression, vocab, max_len)?);
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.image.dim().0
    }

    pub fn width(&self) -> usize {
        self.image.dim().1
    }
}

/// Resizes a sample to `resolution`×`resolution`: bilinear for the image,
/// nearest-neighbor for the mask so it stays binary.
pub fn resize_sample(sample: &ImageSample, resolution: usize) -> Result<ImageSample> {
    if resolution % 32 != 0 {
        return Err(Error::Config(format!(
            "resolution {resolution} is not a multiple of 32"
        )));
    }
    let image = resize_bilinear(&sample.image, resolution, resolution);
    let gt_mask = resize_nearest(&sample.gt_mask, resolution, resolution);
    let mut out = ImageSample::new(image, sample.expression.clone(), gt_mask)?;
    out.tokens = sample.tokens.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_640x480() -> ImageSample {
        let image = Array3::from_elem((480, 640, 3), 0.5f32);
        let mut mask = Array2::<u8>::zeros((480, 640));
        for y in 100..200 {
            for x in 100..300 {
                mask[[y, x]] = 1;
            }
        }
        // 640x480 is already 32-divisible
        ImageSample::new(image, "the thing".into(), mask).unwrap()
    }

    #[test]
    fn resize_to_416() {
        let s = resize_sample(&sample_640x480(), 416).unwrap();
        assert_eq!(s.image.dim(), (416, 416, 3));
        assert_eq!(s.gt_mask.dim(), (416, 416));
        assert!(s.gt_mask.iter().all(|&v| v <= 1));
        assert!(s.gt_mask.iter().any(|&v| v == 1));
    }

    #[test]
    fn identity_resize_keeps_mask_count() {
        let image = Array3::from_elem((416, 416, 3), 0.1f32);
        let mut mask = Array2::<u8>::zeros((416, 416));
        mask[[10, 10]] = 1;
        mask[[20, 30]] = 1;
        let s = ImageSample::new(image, "x".into(), mask.clone()).unwrap();
        let r = resize_sample(&s, 416).unwrap();
        assert_eq!(r.gt_mask, mask);
    }

    #[test]
    fn non_divisible_resolution_rejected() {
        assert!(resize_sample(&sample_640x480(), 417).is_err());
    }

    #[test]
    fn empty_mask_rejected() {
        let image = Array3::from_elem((32, 32, 3), 0.0f32);
        let mask = Array2::<u8>::zeros((32, 32));
        assert!(ImageSample::new(image, "x".into(), mask).is_err());
    }
}
