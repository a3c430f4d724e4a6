//! Losses, learning-rate schedule, the training loop and checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};

use burn::module::{AutodiffModule, Module};
use burn::optim::{AdamConfig, GradientsParams, Optimizer};
use burn::record::{BinBytesRecorder, FullPrecisionSettings, Recorder};
use burn::tensor::backend::{AutodiffBackend, Backend};
use burn::tensor::module::interpolate;
use burn::tensor::ops::{InterpolateMode, InterpolateOptions};
use burn::tensor::{ElementConversion, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ImageSample, Vocabulary};
use crate::evaluation::{evaluate, EvalReport};
use crate::model::{batch_tensors, LtsModel, LtsOutput, ModelConfig};
use crate::{Error, Result};

/// Probability clamp used inside the cross entropy.
pub const BCE_EPSILON: f64 = 1e-7;

/// Training hyperparameters. The paper-scale preset matches the published
/// schedule; the desk preset shortens it for CPU runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub decay_factor: f64,
    /// The learning rate is multiplied by `decay_factor` once per
    /// completed `decay_every` epochs.
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Stop as soon as validation clears both bars.
    pub early_stop: Option<EarlyStop>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EarlyStop {
    pub min_mean_iou: f64,
    pub min_loc_quality: f64,
}

impl TrainConfig {
    pub fn paper_scale() -> Self {
        Self {
            lr: 1e-3,
            decay_factor: 0.1,
            decay_every: 30,
            epochs: 45,
            batch_size: 18,
            lambda: 0.1,
            seed: 1,
            early_stop: None,
        }
    }

    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            decay_factor: 0.1,
            decay_every: 24,
            epochs: 30,
            batch_size: 8,
            lambda: 1.0,
            seed: 1,
            early_stop: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.decay_factor > 0.0) {
            return Err(Error::Config("lr and decay_factor must be positive".into()));
        }
        if self.decay_every == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "decay_every, epochs and batch_size must be positive".into(),
            ));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        Ok(())
    }
}

/// Staircase schedule: the base rate decays by `decay_factor` once per
/// completed `decay_every` epochs.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * cfg.decay_factor.powi((epoch / cfg.decay_every) as i32)
}

/// Nearest downsampling of a ground-truth mask batch to a coarser grid,
/// sampling the top-left pixel of each block.
pub fn downsample_gt<B: Backend>(gt: Tensor<B, 3>, out_h: usize, out_w: usize) -> Tensor<B, 3> {
    let [b, h, w] = gt.dims();
    if (h, w) == (out_h, out_w) {
        return gt;
    }
    interpolate(
        gt.reshape([b, 1, h, w]),
        [out_h, out_w],
        InterpolateOptions::new(InterpolateMode::Nearest),
    )
    .reshape([b, out_h, out_w])
}

/// Mean binary cross entropy over probabilities clamped to
/// `[eps, 1 - eps]`.
pub fn bce<B: Backend, const D: usize>(prob: Tensor<B, D>, target: Tensor<B, D>) -> Tensor<B, 1> {
    let p = prob.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    let loss = target.clone() * p.clone().log() + (target.neg() + 1.0) * (p.neg() + 1.0).log();
    loss.mean().reshape([1]).neg()
}

/// The three loss terms of one step.
#[derive(Debug, Clone)]
pub struct LossParts<B: Backend> {
    pub seg: Tensor<B, 1>,
    pub loc: Tensor<B, 1>,
    pub total: Tensor<B, 1>,
}

/// Segmentation loss at the mask grid plus `lambda` times the locating
/// loss at the prior grid, both against nearest-downsampled ground truth.
pub fn total_loss<B: Backend>(
    out: &LtsOutput<B>,
    gt: Tensor<B, 3>,
    lambda: f64,
) -> LossParts<B> {
    let [_, mh, mw] = out.mask.logits.dims();
    let [_, ph, pw] = out.prior.logits.dims();
    let seg = bce(out.mask.prob(), downsample_gt(gt.clone(), mh, mw));
    let loc = bce(out.prior.prior(), downsample_gt(gt, ph, pw));
    let total = seg.clone() + loc.clone() * lambda;
    LossParts { seg, loc, total }
}

/// One row of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub seg_loss: f64,
    pub loc_loss: f64,
    pub total_loss: f64,
    pub val_mean_iou: f64,
    pub val_loc_quality: f64,
}

/// Serialized training state: configs, vocabulary and the raw module and
/// optimizer records.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub vocab: Vocabulary,
    /// Number of completed epochs.
    pub epoch: usize,
    pub best_mean_iou: f64,
    pub model_bytes: Vec<u8>,
    pub optim_bytes: Vec<u8>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = bincode::serialize(self)
            .map_err(|e| Error::Internal(format!("checkpoint encode: {e}")))?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let ckpt: Self = bincode::deserialize(&bytes)
            .map_err(|e| Error::Data(format!("checkpoint decode: {e}")))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    /// Rebuilds the model on an inference backend.
    pub fn restore_model<B: Backend>(&self, device: &B::Device) -> Result<LtsModel<B>> {
        let model = LtsModel::<B>::new(&self.model_config, device)?;
        let recorder = BinBytesRecorder::<FullPrecisionSettings>::new();
        let record = recorder
            .load(self.model_bytes.clone(), device)
            .map_err(|e| Error::Data(format!("model record decode: {e}")))?;
        Ok(model.load_record(record))
    }
}

pub fn record_model_bytes<B: Backend>(model: &LtsModel<B>) -> Result<Vec<u8>> {
    let recorder = BinBytesRecorder::<FullPrecisionSettings>::new();
    recorder
        .record(model.clone().into_record(), ())
        .map_err(|e| Error::Internal(format!("model record encode: {e}")))
}

/// Result of a training run.
pub struct TrainOutcome<B: AutodiffBackend> {
    pub model: LtsModel<B>,
    pub history: Vec<EpochStats>,
    pub best: Checkpoint,
    pub best_report: EvalReport,
}

/// Adam training loop with a per-epoch deterministic shuffle, CSV
/// logging, best-checkpoint tracking and optional early stopping.
#[allow(clippy::too_many_arguments)]
pub fn train<B: AutodiffBackend>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    train_set: &[ImageSample],
    val_set: &[ImageSample],
    csv_path: Option<&PathBuf>,
    device: &B::Device,
) -> Result<TrainOutcome<B>>
where
    LtsModel<B>: AutodiffModule<B, InnerModule = LtsModel<B::InnerBackend>>,
{
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    B::seed(cfg.seed);
    let mut model = LtsModel::<B>::new(model_cfg, device)?;
    let mut optim = AdamConfig::new().with_epsilon(1e-8).init();
    let mut history = Vec::new();
    let mut best: Option<(Checkpoint, EvalReport)> = None;
    let mut csv = match csv_path {
        Some(p) => {
            let mut f = std::fs::File::create(p)?;
            writeln!(f, "epoch,lr,seg_loss,loc_loss,total_loss,val_mean_iou,val_loc_quality")?;
            Some(f)
        }
        None => None,
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        // reseeding per epoch keeps resumed runs on the same sample order
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ epoch as u64);
        order.shuffle(&mut rng);
        let mut seg_sum = 0.0f64;
        let mut loc_sum = 0.0f64;
        let mut total_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&ImageSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (images, tokens, gt) = batch_tensors::<B>(&refs, device)?;
            let out = model.forward(images, &tokens);
            let parts = total_loss(&out, gt, cfg.lambda);
            let seg = parts.seg.into_scalar().elem::<f64>();
            let loc = parts.loc.into_scalar().elem::<f64>();
            let total = seg + cfg.lambda * loc;
            if !total.is_finite() {
                return Err(Error::Runtime(format!(
                    "non-finite loss at epoch {epoch} batch {batches}: seg {seg}, loc {loc}"
                )));
            }
            seg_sum += seg;
            loc_sum += loc;
            total_sum += total;
            batches += 1;
            let grads = parts.total.backward();
            let grads = GradientsParams::from_grads(grads, &model);
            model = optim.step(lr, model, grads);
        }
        let report = evaluate(&model.valid(), val_set, cfg.batch_size, device)?;
        let stats = EpochStats {
            epoch,
            lr,
            seg_loss: seg_sum / batches as f64,
            loc_loss: loc_sum / batches as f64,
            total_loss: total_sum / batches as f64,
            val_mean_iou: report.mean_iou,
            val_loc_quality: report.loc_quality,
        };
        if let Some(f) = csv.as_mut() {
            writeln!(
                f,
                "{},{:.6e},{:.6},{:.6},{:.6},{:.6},{:.6}",
                stats.epoch,
                stats.lr,
                stats.seg_loss,
                stats.loc_loss,
                stats.total_loss,
                stats.val_mean_iou,
                stats.val_loc_quality
            )?;
        }
        log::info!(
            "epoch {epoch}: lr {lr:.2e} loss {:.4} val IoU {:.4} loc {:.4}",
            stats.total_loss,
            stats.val_mean_iou,
            stats.val_loc_quality
        );
        let is_best = best
            .as_ref()
            .map(|(c, _)| report.mean_iou > c.best_mean_iou)
            .unwrap_or(true);
        if is_best {
            let ckpt = Checkpoint {
                version: CHECKPOINT_VERSION,
                model_config: model_cfg.clone(),
                train_config: cfg.clone(),
                vocab: vocab.clone(),
                epoch: epoch + 1,
                best_mean_iou: report.mean_iou,
                model_bytes: record_model_bytes(&model.valid())?,
                optim_bytes: Vec::new(),
            };
            best = Some((ckpt, report.clone()));
        }
        let stop = cfg.early_stop.as_ref().is_some_and(|e| {
            report.mean_iou >= e.min_mean_iou && report.loc_quality >= e.min_loc_quality
        });
        history.push(stats);
        if stop {
            break;
        }
    }
    let (best, best_report) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        history,
        best,
        best_report,
    })
}
