use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Forecast,
    Classify,
    Tier2,
}

/// Mean per-post losses over one pass. `total = pred + λ·temp`; `task` holds
/// the finetuning objective's extra terms and is zero when pretraining.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub pred: f64,
    pub temp: f64,
    pub total: f64,
    pub task: f64,
}

impl LossSummary {
    /// The quantity optimised and monitored for early stopping.
    pub fn objective(&self) -> f64 {
        self.total + self.task
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub train: LossSummary,
    pub validation: Option<LossSummary>,
    pub lambda: f64,
    pub teacher_forcing: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub steps: u64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub seconds: f64,
}

impl TrainReport {
    /// One JSON line per epoch, then a summary line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for r in &self.epochs {
            serde_json::to_writer(&mut f, r)?;
            writeln!(f).map_err(|e| Error::io(path, e))?;
        }
        let summary = serde_json::json!({
            "best_epoch": self.best_epoch,
            "stop_reason": self.stop_reason,
            "epochs_run": self.epochs.len(),
            "seconds": self.seconds,
        });
        serde_json::to_writer(&mut f, &summary)?;
        writeln!(f).map_err(|e| Error::io(path, e))?;
        f.flush().map_err(|e| Error::io(path, e))
    }

    /// Copy with all wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.seconds = 0.0;
        for e in &mut r.epochs {
            e.seconds = 0.0;
        }
        r
    }

    /// Largest `|L_total − (L_pred + λ·L_temp)|`, relative to `max(1, |L_total|)`.
    pub fn max_identity_error(&self) -> f64 {
        self.epochs
            .iter()
            .flat_map(|e| std::iter::once((e.train, e.lambda)).chain(e.validation.map(|v| (v, e.lambda))))
            .map(|(s, l)| (s.total - (s.pred + l * s.temp)).abs() / s.total.abs().max(1.0))
            .fold(0.0, f64::max)
    }
}
