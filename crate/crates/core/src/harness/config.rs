use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Task, AVAILABILITY_LEVELS};
use crate::error::{Error, Result};
use crate::model::{BnPooling, ModelShape, Variant};
use crate::optim::{AdamWConfig, ClipMode, ScheduleSpec};
use crate::tensor::{DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM};

/// How records are divided into train, validation and test sets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Fixed split when every record carries a split tag, cross-validation otherwise.
    #[default]
    Auto,
    /// Stratified k-fold: fold `i` is the test set, fold `i+1` validation.
    Cv,
    /// Use the records' split tags; one cell per seed.
    FixedSplit,
}

/// Every knob of one experiment. All fields have defaults, so a config file
/// only needs to list what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub clip: f64,
    pub clip_mode: ClipMode,
    pub warmup_frac: f64,
    pub final_frac: f64,
    pub adamw: AdamWConfig,
    pub folds: usize,
    pub seeds: Vec<u64>,
    pub levels: Vec<u8>,
    /// Seeds the test-set availability masks; kept apart from training seeds so
    /// every model sees the same masked test sets.
    pub mask_seed: u64,
    /// Text availability applied to validation during model selection.
    pub val_level: u8,
    pub hidden1: usize,
    pub hidden2: usize,
    pub dropout: f32,
    pub bn_eps: f32,
    pub bn_momentum: f32,
    pub bn_pooling: BnPooling,
    pub split_mode: SplitMode,
    pub l2_normalize: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Binary,
            variant: Variant::Sr,
            epochs: 5,
            batch_size: 8,
            base_lr: 1e-4,
            clip: 2.0,
            clip_mode: ClipMode::Norm,
            warmup_frac: 0.2,
            final_frac: 0.1,
            adamw: AdamWConfig::default(),
            folds: 5,
            seeds: vec![0, 1, 2],
            levels: AVAILABILITY_LEVELS.to_vec(),
            mask_seed: 0,
            val_level: 100,
            hidden1: 512,
            hidden2: 256,
            dropout: 0.2,
            bn_eps: DEFAULT_BN_EPS,
            bn_momentum: DEFAULT_BN_MOMENTUM,
            bn_pooling: BnPooling::Pooled,
            split_mode: SplitMode::Auto,
            l2_normalize: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch_size must be >= 2 for batch norm, got {}",
                self.batch_size
            ));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return bad(format!("clip threshold must be > 0, got {}", self.clip));
        }
        ScheduleSpec::new(self.base_lr, 1, self.warmup_frac, self.final_frac)?;
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.levels.is_empty() {
            return bad("at least one availability level is required".into());
        }
        for &level in self.levels.iter().chain([&self.val_level]) {
            if !AVAILABILITY_LEVELS.contains(&level) {
                return bad(format!(
                    "availability level {level} is not one of {AVAILABILITY_LEVELS:?}"
                ));
            }
        }
        if self.split_mode == SplitMode::Cv && self.folds < 3 {
            return bad(format!("cross-validation needs folds >= 3, got {}", self.folds));
        }
        if self.hidden1 == 0 || self.hidden2 == 0 {
            return bad("hidden sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return bad(format!("bn_momentum must lie in (0, 1], got {}", self.bn_momentum));
        }
        if self.bn_eps.is_nan() || self.bn_eps <= 0.0 {
            return bad(format!("bn_eps must be > 0, got {}", self.bn_eps));
        }
        Ok(())
    }

    pub fn model_shape(&self, embed_dim: usize, classes: usize) -> ModelShape {
        ModelShape {
            embed_dim,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            classes,
            dropout_rate: self.dropout,
            bn_eps: self.bn_eps,
            bn_momentum: self.bn_momentum,
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
