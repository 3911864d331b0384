//! Run configuration, stored as TOML.
//!
//! ```toml
//! seed = 7
//! data_dir = "data"          # relative paths resolve against the file
//! out_dir = "runs"
//!
//! [model]                    # every field of the network configuration
//! mode = "3d"
//! modalities = 2
//! extents = [32, 32, 32]
//! # ...
//!
//! [optimizer]
//! lr = 0.001
//! weight_decay = 0.0001
//!
//! [schedule]
//! max_epochs = 100
//! patience = 30
//!
//! [train]
//! batch_size = 2
//! folds = 5
//! validation = "held-out"    # or "training" to score on the training cases
//!
//! [augment]
//! flip = true
//! rotate = true
//! ```
//!
//! Sections other than `model` may be omitted and take the defaults above.

use std::path::{Path, PathBuf};

use denseformer::backbone::{Mode, ModelConfig};
use denseformer::loss::LossConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { lr: 1e-3, weight_decay: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub max_epochs: usize,
    pub poly_power: f64,
    /// Epochs without a strict validation improvement before stopping.
    pub patience: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { max_epochs: 100, poly_power: 0.9, patience: 30 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Validation {
    /// Score the fold's held-out cases.
    HeldOut,
    /// Score the training cases themselves.
    Training,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub folds: usize,
    pub validation: Validation,
    /// Skip parameter updates. Used to exercise early stopping.
    pub frozen: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 2, folds: 5, validation: Validation::HeldOut, frozen: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip: bool,
    pub rotate: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { flip: true, rotate: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub loss: LossConfig,
}

impl RunConfig {
    /// Defaults for `model`, with the batch size chosen by dimensionality.
    pub fn new(model: ModelConfig, data_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        let batch_size = match model.mode {
            Mode::Volumetric => 2,
            Mode::Planar => 8,
        };
        RunConfig {
            seed: 0,
            data_dir: data_dir.into(),
            out_dir: out_dir.into(),
            model,
            optimizer: OptimizerConfig::default(),
            schedule: ScheduleConfig::default(),
            train: TrainConfig { batch_size, ..TrainConfig::default() },
            augment: AugmentConfig::default(),
            loss: LossConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(HarnessError::Config(format!("learning rate must be positive, got {}", o.lr)));
        }
        if !(o.weight_decay >= 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(HarnessError::Config(format!("invalid optimizer settings {o:?}")));
        }
        let s = &self.schedule;
        if s.max_epochs == 0 || s.patience == 0 || s.patience > s.max_epochs {
            return Err(HarnessError::Config(format!(
                "need 0 < patience <= max_epochs, got patience {} with {} epochs",
                s.patience, s.max_epochs
            )));
        }
        if !(s.poly_power > 0.0) {
            return Err(HarnessError::Config(format!("poly power must be positive, got {}", s.poly_power)));
        }
        if self.train.batch_size == 0 || self.train.folds == 0 {
            return Err(HarnessError::Config("batch size and fold count must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads and validates a config file. Relative paths inside it are
    /// taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data_dir, &mut cfg.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}
