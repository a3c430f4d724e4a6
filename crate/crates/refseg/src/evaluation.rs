//! Mask binarization, IoU metrics and dataset-level evaluation.

use burn::tensor::backend::Backend;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{resize_bilinear_2d, ImageSample};
use crate::model::{batch_tensors, tensor_to_array, LtsModel};
use crate::{Error, Result};

/// Decision threshold applied to predicted probabilities.
pub const MASK_THRESHOLD: f32 = 0.25;

/// Strict thresholding: a pixel is foreground only when its probability
/// exceeds the threshold, so exactly 0.25 stays background.
pub fn binarize(prob: &Array2<f32>, threshold: f32) -> Array2<u8> {
    prob.map(|&p| u8::from(p > threshold))
}

/// Intersection and union pixel counts of two binary masks.
pub fn mask_counts(pred: &Array2<u8>, gt: &Array2<u8>) -> Result<(usize, usize)> {
    if pred.dim() != gt.dim() {
        return Err(Error::Data(format!(
            "mask shape mismatch: {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        let p = p > 0;
        let g = g > 0;
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok((inter, union))
}

/// IoU of a prediction against a non-empty ground truth. An empty ground
/// truth is a data error; an empty prediction scores zero.
pub fn iou(pred: &Array2<u8>, gt: &Array2<u8>) -> Result<f64> {
    if gt.iter().all(|&g| g == 0) {
        return Err(Error::Data("ground-truth mask is empty".into()));
    }
    let (inter, union) = mask_counts(pred, gt)?;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Dataset-level metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    /// Sum of intersections divided by sum of unions.
    pub cumulative_iou: f64,
    /// Mean of per-sample IoUs.
    pub mean_iou: f64,
    /// Fraction of samples whose IoU strictly exceeds each threshold.
    pub precision_at: Vec<(f64, f64)>,
    /// Fraction of samples whose prior argmax lands inside the
    /// downsampled ground-truth region.
    pub loc_quality: f64,
}

const PRECISION_THRESHOLDS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// Aggregates per-sample (intersection, union) counts into cumulative
/// IoU, mean IoU and strict precision@X.
pub fn aggregate(counts: &[(usize, usize)]) -> Result<(f64, f64, Vec<(f64, f64)>)> {
    if counts.is_empty() {
        return Err(Error::Data("no samples to aggregate".into()));
    }
    let mut inter_sum = 0usize;
    let mut union_sum = 0usize;
    let mut iou_sum = 0.0f64;
    let mut hits = [0usize; PRECISION_THRESHOLDS.len()];
    for &(inter, union) in counts {
        inter_sum += inter;
        union_sum += union;
        let iou = if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        };
        iou_sum += iou;
        for (h, &t) in hits.iter_mut().zip(PRECISION_THRESHOLDS.iter()) {
            *h += usize::from(iou > t);
        }
    }
    let cumulative = if union_sum == 0 {
        0.0
    } else {
        inter_sum as f64 / union_sum as f64
    };
    let mean = iou_sum / counts.len() as f64;
    let precision = PRECISION_THRESHOLDS
        .iter()
        .zip(hits.iter())
        .map(|(&t, &h)| (t, h as f64 / counts.len() as f64))
        .collect();
    Ok((cumulative, mean, precision))
}

/// Whether the row-major argmax of the prior lands on a foreground cell of
/// the ground truth downsampled to the prior grid.
pub fn prior_hit(prior: &Array2<f32>, gt: &Array2<u8>) -> Result<bool> {
    let (ph, pw) = prior.dim();
    let (gh, gw) = gt.dim();
    if gh % ph != 0 || gw % pw != 0 {
        return Err(Error::Data(format!(
            "ground truth {gh}x{gw} is not a multiple of the prior grid {ph}x{pw}"
        )));
    }
    // a coarse cell is foreground when any pixel of its block is
    let by = gh / ph;
    let bx = gw / pw;
    let coarse = Array2::from_shape_fn((ph, pw), |(cy, cx)| {
        let mut any = 0u8;
        for y in cy * by..(cy + 1) * by {
            for x in cx * bx..(cx + 1) * bx {
                any |= u8::from(gt[(y, x)] > 0);
            }
        }
        any
    });
    let mut best = (0usize, 0usize);
    let mut best_val = f32::NEG_INFINITY;
    for y in 0..ph {
        for x in 0..pw {
            if prior[(y, x)] > best_val {
                best_val = prior[(y, x)];
                best = (y, x);
            }
        }
    }
    Ok(coarse[best] > 0)
}

/// Runs the model over a dataset and reports dataset metrics. Predictions
/// are bilinearly upsampled to full resolution before thresholding.
pub fn evaluate<B: Backend>(
    model: &LtsModel<B>,
    samples: &[ImageSample],
    batch_size: usize,
    device: &B::Device,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut counts = Vec::with_capacity(samples.len());
    let mut hits = 0usize;
    for chunk in samples.chunks(batch_size) {
        let refs: Vec<&ImageSample> = chunk.iter().collect();
        let (images, tokens, _) = batch_tensors::<B>(&refs, device)?;
        let out = model.forward(images, &tokens);
        let probs = out.mask.prob();
        let priors = out.prior.prior();
        for (i, sample) in chunk.iter().enumerate() {
            let (h, w) = sample.gt_mask.dim();
            let prob = tensor_to_array(
                probs
                    .clone()
                    .slice([i..i + 1])
                    .squeeze::<2>(0),
            );
            let full = resize_bilinear_2d(&prob, h, w);
            let pred = binarize(&full, MASK_THRESHOLD);
            if sample.gt_mask.iter().all(|&g| g == 0) {
                return Err(Error::Data("ground-truth mask is empty".into()));
            }
            counts.push(mask_counts(&pred, &sample.gt_mask)?);
            let prior = tensor_to_array(
                priors
                    .clone()
                    .slice([i..i + 1])
                    .squeeze::<2>(0),
            );
            hits += usize::from(prior_hit(&prior, &sample.gt_mask)?);
        }
    }
    let (cumulative_iou, mean_iou, precision_at) = aggregate(&counts)?;
    Ok(EvalReport {
        samples: samples.len(),
        cumulative_iou,
        mean_iou,
        precision_at,
        loc_quality: hits as f64 / samples.len() as f64,
    })
}

impl EvalReport {
    /// Aligned plain-text table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<16}{:>10}\n", "samples", self.samples));
        s.push_str(&format!(
            "{:<16}{:>10.4}\n",
            "cumulative IoU", self.cumulative_iou
        ));
        s.push_str(&format!("{:<16}{:>10.4}\n", "mean IoU", self.mean_iou));
        for &(t, p) in &self.precision_at {
            s.push_str(&format!("{:<16}{:>10.4}\n", format!("prec@{t:.1}"), p));
        }
        s.push_str(&format!("{:<16}{:>10.4}\n", "loc quality", self.loc_quality));
        s
    }
}
