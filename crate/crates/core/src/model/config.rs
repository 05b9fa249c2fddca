use crate::encoder::Ablation;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Architecture and inference settings. Stored in every checkpoint header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of time and content embeddings (even).
    pub d_emb: usize,
    /// Width of each of the four interval-vector segments.
    pub d_v: usize,
    /// Block width `D`.
    pub d_model: usize,
    /// State width `N` per channel.
    pub d_state: usize,
    pub n_blocks: usize,
    pub conv_width: usize,
    /// Token limit for the content encoder; also the rollout chunk length.
    pub l_max: usize,
    pub head_hidden: usize,
    pub sigma_init: f64,
    pub ate_base: f64,
    pub ablation: Ablation,
    /// Default rollout step, seconds.
    pub tau_step: f64,
    /// Default forecast horizon, seconds.
    pub horizon: f64,
    /// Posts stop accruing engagement this long after creation; rollouts end there.
    pub post_lifetime: f64,
    /// Reference gap (dataset median) scaling the discretization step, seconds.
    pub s_ref: f64,
    /// Opinion labels in class-index order.
    pub opinions: Vec<String>,
    /// Initial bias of the remainder head (log space).
    pub remainder_bias: f64,
    /// Enforce the published hyperparameter ranges.
    pub strict: bool,
    /// Seed for parameter initialisation.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_emb: 16,
            d_v: 4,
            d_model: 16,
            d_state: 8,
            n_blocks: 2,
            conv_width: 4,
            l_max: 512,
            head_hidden: 32,
            sigma_init: 10_000.0,
            ate_base: 10_000.0,
            ablation: Ablation::default(),
            tau_step: 300.0,
            horizon: 28.0 * 86_400.0,
            post_lifetime: 72.0 * 3600.0,
            s_ref: 3600.0,
            opinions: Vec::new(),
            remainder_bias: 1.0,
            strict: false,
            init_seed: 0,
        }
    }
}

fn in_range<T: PartialOrd + std::fmt::Debug>(name: &str, v: T, lo: T, hi: T) -> Result<()> {
    if v < lo || v > hi {
        return Err(Error::Config(format!("{name} = {v:?} outside [{lo:?}, {hi:?}]")));
    }
    Ok(())
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_emb == 0 || self.d_emb % 2 != 0 {
            return Err(Error::Config(format!("d_emb must be even and > 0, got {}", self.d_emb)));
        }
        for (name, v) in [
            ("d_v", self.d_v),
            ("d_model", self.d_model),
            ("d_state", self.d_state),
            ("n_blocks", self.n_blocks),
            ("conv_width", self.conv_width),
            ("head_hidden", self.head_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        if self.conv_width > crate::numerics::ops::MAX_CONV_WIDTH {
            return Err(Error::Config(format!("conv_width {} too large", self.conv_width)));
        }
        if self.l_max < 8 {
            return Err(Error::Config("l_max must be >= 8".into()));
        }
        for (name, v) in [
            ("sigma_init", self.sigma_init),
            ("tau_step", self.tau_step),
            ("horizon", self.horizon),
            ("post_lifetime", self.post_lifetime),
            ("s_ref", self.s_ref),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.ate_base > 1.0) {
            return Err(Error::Config("ate_base must be > 1".into()));
        }
        if self.strict {
            in_range("d_model", self.d_model, 64, 128)?;
            in_range("d_emb", self.d_emb, 128, 512)?;
            in_range("d_state", self.d_state, 512, 2048)?;
            in_range("head_hidden", self.head_hidden, 256, 1024)?;
            in_range("n_blocks", self.n_blocks, 2, 8)?;
            in_range("l_max", self.l_max, 1024, 8192)?;
            in_range("sigma_init", self.sigma_init, 5000.0, 20_000.0)?;
            in_range("tau_step", self.tau_step, 300.0, 3600.0)?;
            in_range("horizon", self.horizon, 7.0 * 86_400.0, 28.0 * 86_400.0)?;
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.opinions.len().max(1)
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.opinions
            .iter()
            .position(|o| o == label)
            .ok_or_else(|| Error::Invalid(format!("opinion {label:?} not in model label set {:?}", self.opinions)))
    }
}
