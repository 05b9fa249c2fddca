//! Value-level forms of the two pretraining losses.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Per-post next-step predictions and targets, both `log1p` and aligned by row.
#[derive(Clone, Debug, PartialEq)]
pub struct PostPredictions {
    pub preds: Vec<[f64; 4]>,
    pub targets: Vec<[f64; 4]>,
}

/// `(1/|P|) Σ_posts Σ_j ‖ê_{j+1} − e_{j+1}‖²`.
pub fn loss_pred(batch: &[PostPredictions]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let mut total = 0.0;
    for (i, p) in batch.iter().enumerate() {
        if p.preds.len() != p.targets.len() {
            return Err(Error::Shape(format!(
                "post {i}: {} predictions for {} targets",
                p.preds.len(),
                p.targets.len()
            )));
        }
        for (a, b) in p.preds.iter().zip(&p.targets) {
            total += (0..4).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>();
        }
    }
    Ok(total / batch.len() as f64)
}

/// Hidden states of one block over one post: `h` is `L×W`, `dt[j]` is the
/// step into row `j`, `a_tilde` the `W` diagonal generator entries.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTransitions {
    pub h: Tensor,
    pub dt: Vec<f64>,
    pub a_tilde: Vec<f64>,
}

/// `(1/|P|) Σ_posts Σ_blocks Σ_j ‖h_{j+1} − exp(Δt_{j+1}·Ã) h_j‖²`.
pub fn loss_temp(batch: &[Vec<StateTransitions>]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let mut total = 0.0;
    for (i, blocks) in batch.iter().enumerate() {
        if blocks.is_empty() {
            return Err(Error::Invalid(format!("post {i}: missing states")));
        }
        for s in blocks {
            let (l, w) = (s.h.rows(), s.h.cols());
            if s.dt.len() != l || s.a_tilde.len() != w {
                return Err(Error::Shape(format!("post {i}: states {l}×{w} with {} steps, {} rates", s.dt.len(), s.a_tilde.len())));
            }
            for j in 1..l {
                for k in 0..w {
                    let r = s.h.get(j, k) - (s.dt[j] * s.a_tilde[k]).exp() * s.h.get(j - 1, k);
                    total += r * r;
                }
            }
        }
    }
    Ok(total / batch.len() as f64)
}

/// Stop after `patience` epochs without an improvement larger than a relative `1e-9`.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    /// Record a validation loss; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if self.best == f64::INFINITY || loss < self.best - 1e-9 * self.best.abs() {
            self.best = loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.patience > 0 && self.bad_epochs >= self.patience
    }
}
