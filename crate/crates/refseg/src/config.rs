//! Run configuration: declarative file, environment overrides and preset
//! handling. Flags (applied by the CLI) win over the environment, which
//! wins over the file, which wins over the preset defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::objective::TrainConfig;
use crate::{Error, Result};

/// Environment variable prefix for CI overrides.
pub const ENV_PREFIX: &str = "REFSEG_";

/// Merged configuration for every command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// "desk" or "paper".
    pub preset: String,
    pub resolution: usize,
    pub seed: u64,
    /// Localization mode: filter, transformer or none.
    pub mode: String,
    pub n_filters: usize,
    pub lambda: f64,
    pub lr: f64,
    pub lr_decay_epoch: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_len: usize,
    /// Disabled components: any of fusion, filter, seg.
    pub ablate: Vec<String>,
    pub data: Option<PathBuf>,
    pub val_data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        let t = TrainConfig::desk();
        Self {
            preset: "desk".into(),
            resolution: 224,
            seed: 1,
            mode: "filter".into(),
            n_filters: 1,
            lambda: t.lambda,
            lr: t.lr,
            lr_decay_epoch: t.decay_every,
            epochs: t.epochs,
            batch_size: t.batch_size,
            max_len: 15,
            ablate: Vec::new(),
            data: None,
            val_data: None,
            checkpoint: None,
            out: None,
        }
    }

    pub fn paper() -> Self {
        let t = TrainConfig::paper_scale();
        Self {
            preset: "paper".into(),
            resolution: 416,
            batch_size: t.batch_size,
            lr_decay_epoch: t.decay_every,
            epochs: t.epochs,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected desk|paper)"
            ))),
        }
    }

    /// Loads a TOML file; unknown keys are rejected.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Applies `REFSEG_*` environment overrides to scalar fields.
    pub fn apply_env(&mut self) -> Result<()> {
        fn get(name: &str) -> Option<String> {
            std::env::var(format!("{ENV_PREFIX}{name}")).ok()
        }
        fn parse<T: std::str::FromStr>(name: &str, raw: &str) -> Result<T> {
            raw.parse().map_err(|_| {
                Error::Config(format!("invalid {ENV_PREFIX}{name}: {raw:?}"))
            })
        }
        if let Some(v) = get("PRESET") {
            *self = Self::preset(&v)?;
        }
        if let Some(v) = get("RESOLUTION") {
            self.resolution = parse("RESOLUTION", &v)?;
        }
        if let Some(v) = get("SEED") {
            self.seed = parse("SEED", &v)?;
        }
        if let Some(v) = get("MODE") {
            self.mode = v;
        }
        if let Some(v) = get("N_FILTERS") {
            self.n_filters = parse("N_FILTERS", &v)?;
        }
        if let Some(v) = get("LAMBDA") {
            self.lambda = parse("LAMBDA", &v)?;
        }
        if let Some(v) = get("LR") {
            self.lr = parse("LR", &v)?;
        }
        if let Some(v) = get("EPOCHS") {
            self.epochs = parse("EPOCHS", &v)?;
        }
        if let Some(v) = get("BATCH_SIZE") {
            self.batch_size = parse("BATCH_SIZE", &v)?;
        }
        if let Some(v) = get("LR_DECAY_EPOCH") {
            self.lr_decay_epoch = parse("LR_DECAY_EPOCH", &v)?;
        }
        if let Some(v) = get("ABLATE") {
            self.ablate = v
                .split(',')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.resolution % 32 != 0 {
            return Err(Error::Config(format!(
                "resolution {} must be a positive multiple of 32",
                self.resolution
            )));
        }
        self.mode.parse::<crate::model::localization::LocalizationMode>()?;
        for a in &self.ablate {
            if !matches!(a.as_str(), "fusion" | "filter" | "seg") {
                return Err(Error::Config(format!(
                    "unknown ablation {a:?} (expected fusion|filter|seg)"
                )));
            }
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        self.train_config().validate()?;
        Ok(())
    }

    fn ablated(&self, name: &str) -> bool {
        self.ablate.iter().any(|a| a == name)
    }

    /// Model configuration with preset widths, flag overrides and
    /// ablation toggles applied.
    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut cfg = match self.preset.as_str() {
            "paper" => ModelConfig::paper_scale(vocab_size),
            _ => ModelConfig::desk(vocab_size),
        };
        cfg.max_len = self.max_len;
        cfg.localization.mode = if self.ablated("filter") {
            "none".into()
        } else {
            self.mode.clone()
        };
        cfg.localization.n_filters = self.n_filters;
        cfg.fusion_enabled = !self.ablated("fusion");
        cfg.seg_enabled = !self.ablated("seg");
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = match self.preset.as_str() {
            "paper" => TrainConfig::paper_scale(),
            _ => TrainConfig::desk(),
        };
        TrainConfig {
            lr: self.lr,
            decay_every: self.lr_decay_epoch,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lambda: self.lambda,
            seed: self.seed,
            ..base
        }
    }

    /// Writes the snapshot placed next to every artifact.
    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Internal(format!("config encode: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "resolution = 224\nwat = 3\n").unwrap();
        assert!(RunConfig::from_file(&path).is_err());
    }

    #[test]
    fn file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "resolution = 320\nseed = 9\nmode = \"transformer\"\n").unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.resolution, 320);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.mode, "transformer");
        assert_eq!(cfg.batch_size, RunConfig::desk().batch_size);
        cfg.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut cfg = RunConfig::desk();
        cfg.resolution = 100;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::desk();
        cfg.ablate = vec!["decoder".into()];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::desk();
        cfg.mode = "oracle".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ablations_reach_model_config() {
        let mut cfg = RunConfig::desk();
        cfg.ablate = vec!["fusion".into(), "seg".into()];
        let m = cfg.model_config(50).unwrap();
        assert!(!m.fusion_enabled);
        assert!(!m.seg_enabled);
        assert_eq!(m.localization.mode, "filter");
        cfg.ablate = vec!["filter".into()];
        let m = cfg.model_config(50).unwrap();
        assert_eq!(m.localization.mode, "none");
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.toml");
        let mut cfg = RunConfig::paper();
        cfg.ablate = vec!["seg".into()];
        cfg.write_snapshot(&path).unwrap();
        let back = RunConfig::from_file(&path).unwrap();
        assert_eq!(toml::to_string(&back).unwrap(), toml::to_string(&cfg).unwrap());
    }
}
