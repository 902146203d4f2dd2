use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fragments::SamplerConfig;
use crate::losses::DEFAULT_LAMBDA;
use crate::model::ModelSpec;
use crate::rng::hash_hex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// Decoupled: applied as `p -= lr * wd * p`.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub schedule: LrSchedule,
}

/// Per-epoch step-size schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `lr` down to `lr * floor` at the last epoch.
    Cosine,
}

/// Final step size of the cosine schedule, relative to the peak.
pub const COSINE_FLOOR: f64 = 0.02;

impl OptimConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let t = if self.epochs > 1 { epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64 } else { 0.0 };
                let c = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
                self.lr * (COSINE_FLOOR + (1.0 - COSINE_FLOOR) * c)
            }
        }
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 1e-4,
            epochs: 200,
            batch_size: 16,
            schedule: LrSchedule::Constant,
        }
    }
}

/// Scene-classification pretraining of the backbone on synthetic videos.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub enabled: bool,
    pub videos: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            enabled: false,
            videos: 64,
            epochs: 4,
            lr: 1e-3,
            batch_size: 8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Directory written by `gen-data`.
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub sampler: SamplerConfig,
    pub optim: OptimConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    pub seed: u64,
    pub lambda: f64,
    /// Stop once the end-of-epoch train SRCC reaches this value.
    #[serde(default)]
    pub target_srcc: Option<f64>,
    /// Epochs between train-set evaluations; the last epoch is always
    /// evaluated.
    #[serde(default = "one")]
    pub eval_every: usize,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn toy(seed: u64) -> Self {
        RunConfig {
            model: ModelSpec::toy(),
            sampler: SamplerConfig::toy(),
            optim: OptimConfig::default(),
            pretrain: PretrainConfig::default(),
            data: DataConfig::default(),
            seed,
            lambda: DEFAULT_LAMBDA,
            target_srcc: None,
            eval_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.backbone.validate()?;
        self.sampler.validate()?;
        let g = &self.model.backbone.fragment;
        if g.patch != self.sampler.patch
            || g.frames_per_cube != self.sampler.frames_per_cube
            || self.sampler.side() != self.model.backbone.input_side {
            return Err(Error::Config(format!(
                "sampler (side {}, patch {}) does not match backbone (side {}, patch {})",
                self.sampler.side(),
                self.sampler.patch,
                self.model.backbone.input_side,
                g.patch
            )));
        }
        if self.sampler.clip_len() != self.model.backbone.clip_len {
            return Err(Error::Config(format!(
                "sampler yields {} frames, backbone expects {}",
                self.sampler.clip_len(),
                self.model.backbone.clip_len
            )));
        }
        let o = &self.optim;
        if o.batch_size < 2 {
            return Err(Error::Config(format!("batch size {} < 2; the losses need pairs", o.batch_size)));
        }
        if !(o.lr >= 0.0 && o.lr.is_finite()) || !(o.weight_decay >= 0.0) || !(o.eps > 0.0) {
            return Err(Error::Config("optimizer step size, decay and eps must be non-negative and finite".into()));
        }
        if !(0.0..1.0).contains(&o.betas.0) || !(0.0..1.0).contains(&o.betas.1) {
            return Err(Error::Config(format!("moment decays {:?} outside [0, 1)", o.betas)));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be non-negative", self.lambda)));
        }
        if self.pretrain.enabled && self.pretrain.batch_size < 2 {
            return Err(Error::Config("pretraining batch size must be at least 2".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s).map_err(|e| Error::Config(format!("invalid run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        hash_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}
