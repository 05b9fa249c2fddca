use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::AdamConfig;
use serde::{Deserialize, Serialize};

/// Optimisation settings shared by every training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Weight of the temporal-consistency loss.
    pub lambda: f64,
    pub patience: usize,
    pub seed: u64,
    /// Teacher-forcing probability, linear from `tf_start` at the first epoch
    /// to `tf_end` at the last.
    pub tf_start: f64,
    pub tf_end: f64,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub freeze_encoder: bool,
    pub strict: bool,
    /// Forecast finetuning: rollout length and step of the query rows, seconds.
    pub rollout_horizon: f64,
    pub rollout_step: f64,
    /// Observation windows are drawn from these (seconds) half of the time and
    /// log-uniformly over `[window_min, window_max]` otherwise.
    pub window_choices: Vec<f64>,
    pub window_min: f64,
    pub window_max: f64,
    /// Tier-2 training: sampled issue times per opinion and update epochs.
    pub tier2_samples: usize,
    pub tier2_epochs: usize,
    pub tier2_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            lr: 1e-3,
            warmup_steps: 100,
            weight_decay: 0.01,
            dropout: 0.0,
            lambda: 0.1,
            patience: 5,
            seed: 0,
            tf_start: 1.0,
            tf_end: 0.5,
            clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            freeze_encoder: false,
            strict: false,
            rollout_horizon: 12.0 * 3600.0,
            rollout_step: 300.0,
            window_choices: [15, 30, 45, 60, 90, 120, 180, 240, 300, 360]
                .iter()
                .map(|m| *m as f64 * 60.0)
                .collect(),
            window_min: 15.0 * 60.0,
            window_max: 72.0 * 3600.0,
            tier2_samples: 24,
            tier2_epochs: 60,
            tier2_lr: 3e-3,
        }
    }
}

fn in_range<T: PartialOrd + std::fmt::Debug>(name: &str, v: T, lo: T, hi: T) -> Result<()> {
    if v < lo || v > hi {
        return Err(Error::Config(format!("{name} = {v:?} outside [{lo:?}, {hi:?}]")));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be > 0".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Config(format!("lambda must lie in (0, 1), got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        for (n, v) in [("tf_start", self.tf_start), ("tf_end", self.tf_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{n} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.rollout_step > 0.0) || !(self.rollout_horizon >= self.rollout_step) {
            return Err(Error::Config("rollout step must be > 0 and <= horizon".into()));
        }
        if !(self.window_min > 0.0) || !(self.window_max >= self.window_min) {
            return Err(Error::Config("window range must be positive and ordered".into()));
        }
        self.adam().validate()?;
        if self.strict {
            in_range("batch_size", self.batch_size, 16, 128)?;
            in_range("lr", self.lr, 1e-5, 1e-3)?;
            in_range("warmup_steps", self.warmup_steps, 500, 1650)?;
            in_range("weight_decay", self.weight_decay, 0.005, 0.15)?;
            in_range("dropout", self.dropout, 0.15, 0.3)?;
            in_range("epochs", self.epochs, 50, 150)?;
            in_range("patience", self.patience, 5, 20)?;
            in_range("beta1", self.beta1, 0.85, 0.95)?;
            in_range("beta2", self.beta2, 0.995, 0.9999)?;
            in_range("eps", self.eps, 1e-9, 1e-7)?;
            in_range("clip_norm", self.clip_norm, 0.5, 5.0)?;
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            warmup_steps: self.warmup_steps,
        }
    }

    /// Teacher-forcing probability at `epoch` (0-based).
    pub fn teacher_forcing(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.tf_start;
        }
        let f = epoch as f64 / (self.epochs - 1) as f64;
        self.tf_start + (self.tf_end - self.tf_start) * f.min(1.0)
    }
}

/// Model and optimisation settings in one file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&s)?;
        c.model.validate()?;
        c.train.validate()?;
        Ok(c)
    }
}
