use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use refseg::config::RunConfig;
use refseg::data::{
    build_vocab, generate_synthetic, load_image, load_jsonl, resize_bilinear, tokenize,
    write_dataset, ImageSample, SynthConfig,
};
use refseg::evaluation::{binarize, evaluate, MASK_THRESHOLD};
use refseg::model::{batch_tensors, tensor_to_array, LtsModel};
use refseg::objective::{train, Checkpoint};
use refseg::{Error, Infer, Result, Train};

/// Referring image segmentation: locate the expression, then segment it.
#[derive(Parser)]
#[command(name = "refseg", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every command; they win over `REFSEG_*` environment
/// variables, which win over the config file.
#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Configuration preset: desk or paper.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input resolution, multiple of 32.
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// Localization mode: filter, transformer or none.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    n_filters: Option<usize>,
    /// Locating loss weight.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Disable a component: fusion, filter or seg. Repeatable.
    #[arg(long, global = true)]
    ablate: Vec<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long = "batch", global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    lr_decay_epoch: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic shapes dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of samples.
        #[arg(long)]
        n: usize,
    },
    /// Train a model and write the best checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training JSONL index.
        #[arg(long)]
        data: PathBuf,
        /// Validation JSONL index.
        #[arg(long)]
        val_data: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Predict a mask for one image and expression.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        expression: String,
    },
}

fn merged_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), _) => RunConfig::from_file(path)?,
        (None, Some(p)) => RunConfig::preset(p)?,
        (None, None) => RunConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(p) = &common.preset {
        // an explicit flag re-bases widths even when a file was given
        let base = RunConfig::preset(p)?;
        cfg.preset = base.preset;
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = common.resolution {
        cfg.resolution = v;
    }
    if let Some(v) = &common.mode {
        cfg.mode = v.clone();
    }
    if let Some(v) = common.n_filters {
        cfg.n_filters = v;
    }
    if let Some(v) = common.lambda {
        cfg.lambda = v;
    }
    if !common.ablate.is_empty() {
        cfg.ablate = common.ablate.clone();
    }
    if let Some(v) = common.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = common.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = common.lr {
        cfg.lr = v;
    }
    if let Some(v) = common.lr_decay_epoch {
        cfg.lr_decay_epoch = v;
    }
    if let Some(v) = &common.out {
        cfg.out = Some(v.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out is required".into()))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn cmd_synth(cfg: &RunConfig, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("--n must be positive".into()));
    }
    let dir = out_dir(cfg)?;
    let samples = generate_synthetic(
        &SynthConfig {
            image_size: cfg.resolution,
            seed: cfg.seed,
            ..SynthConfig::default()
        },
        n,
    )?;
    let index = write_dataset(&dir, &samples)?;
    cfg.write_snapshot(&dir.join("config.toml"))?;
    let fg: usize = samples
        .iter()
        .map(|s| s.gt_mask.iter().filter(|&&v| v > 0).count())
        .sum();
    let pixels = n * cfg.resolution * cfg.resolution;
    println!(
        "wrote {} samples to {} (mean foreground {:.1}%)",
        samples.len(),
        index.display(),
        100.0 * fg as f64 / pixels as f64
    );
    Ok(())
}

fn tokenized(
    samples: Vec<ImageSample>,
    vocab: &refseg::data::Vocabulary,
    max_len: usize,
) -> Result<Vec<ImageSample>> {
    samples
        .into_iter()
        .map(|s| s.with_tokens(vocab, max_len))
        .collect()
}

fn cmd_train(cfg: &RunConfig, data: &Path, val_data: &Path) -> Result<()> {
    let dir = out_dir(cfg)?;
    let train_set = load_jsonl(data, cfg.resolution)?;
    let val_set = load_jsonl(val_data, cfg.resolution)?;
    let corpus: Vec<String> = train_set.iter().map(|s| s.expression.clone()).collect();
    let vocab = build_vocab(&corpus, 1)?;
    let train_set = tokenized(train_set, &vocab, cfg.max_len)?;
    let val_set = tokenized(val_set, &vocab, cfg.max_len)?;
    let model_cfg = cfg.model_config(vocab.len())?;
    let train_cfg = cfg.train_config();
    let csv = dir.join("train_log.csv");
    let device = Default::default();
    let outcome = train::<Train>(
        &model_cfg,
        &train_cfg,
        &vocab,
        &train_set,
        &val_set,
        Some(&csv),
        &device,
    )?;
    let ckpt_path = dir.join("checkpoint.bin");
    outcome.best.save(&ckpt_path)?;
    cfg.write_snapshot(&dir.join("config.toml"))?;
    println!(
        "trained {} epochs; best mean IoU {:.4} (loc {:.4}); checkpoint {}",
        outcome.history.len(),
        outcome.best.best_mean_iou,
        outcome.best_report.loc_quality,
        ckpt_path.display()
    );
    Ok(())
}

/// Applies eval-time ablation toggles to a restored model.
fn apply_ablations(model: &mut LtsModel<Infer>, cfg: &RunConfig) -> Result<()> {
    for a in &cfg.ablate {
        match a.as_str() {
            "fusion" => model.fusion.set_enabled(false),
            "filter" => model
                .localizer
                .set_mode(refseg::model::LocalizationMode::None),
            "seg" => model.seg_head.set_enabled(false),
            other => {
                return Err(Error::Config(format!("unknown ablation {other:?}")));
            }
        }
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, data: &Path) -> Result<()> {
    let dir = out_dir(cfg)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let device = Default::default();
    let mut model = ckpt.restore_model::<Infer>(&device)?;
    apply_ablations(&mut model, cfg)?;
    let samples = load_jsonl(data, cfg.resolution)?;
    let samples = tokenized(samples, &ckpt.vocab, ckpt.model_config.max_len)?;
    let report = evaluate(&model, &samples, cfg.batch_size, &device)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Internal(format!("report encode: {e}")))?;
    std::fs::write(dir.join("report.json"), &json)?;
    std::fs::write(dir.join("report.txt"), report.table())?;
    cfg.write_snapshot(&dir.join("config.toml"))?;
    print!("{}", report.table());
    Ok(())
}

fn cmd_predict(
    cfg: &RunConfig,
    checkpoint: &Path,
    image_path: &Path,
    expression: &str,
) -> Result<()> {
    let dir = out_dir(cfg)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let device = Default::default();
    let model = ckpt.restore_model::<Infer>(&device)?;
    let original = load_image(image_path)?;
    let (h, w, _) = original.dim();
    let resized = resize_bilinear(&original, cfg.resolution, cfg.resolution);
    let tokens = tokenize(expression, &ckpt.vocab, ckpt.model_config.max_len)?;
    let dummy_mask = {
        let mut m = Array2::<u8>::zeros((cfg.resolution, cfg.resolution));
        m[(0, 0)] = 1;
        m
    };
    let sample = ImageSample::new(resized, expression.to_string(), dummy_mask)?;
    let sample = ImageSample {
        tokens: Some(tokens),
        ..sample
    };
    let (images, toks, _) = batch_tensors::<Infer>(&[&sample], &device)?;
    let out = model.forward(images, &toks);
    let prior = tensor_to_array(out.prior.prior().squeeze::<2>(0));
    let prob_coarse = tensor_to_array(out.mask.prob().squeeze::<2>(0));
    let prob = refseg::data::resize_bilinear_2d(&prob_coarse, h, w);
    let mask = binarize(&prob, MASK_THRESHOLD);
    let stem = image_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("prediction");
    let paths = refseg::viz::save_prediction(&dir, stem, &original, &prior, &prob, &mask)?;
    cfg.write_snapshot(&dir.join("config.toml"))?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Synth { common, n } => cmd_synth(&merged_config(common)?, *n),
        Cmd::Train {
            common,
            data,
            val_data,
        } => cmd_train(&merged_config(common)?, data, val_data),
        Cmd::Eval {
            common,
            checkpoint,
            data,
        } => cmd_eval(&merged_config(common)?, checkpoint, data),
        Cmd::Predict {
            common,
            checkpoint,
            image,
            expression,
        } => cmd_predict(&merged_config(common)?, checkpoint, image, expression),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
