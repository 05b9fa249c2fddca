//! Regression and classification metrics.

use crate::data::CHANNELS;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred.len(), truth.len())?;
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((s / pred.len() as f64).sqrt())
}

/// Mean absolute percentage error over entries with non-zero truth, plus
/// the number of skipped zero-truth entries. `None` when every truth is zero.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<(Option<f64>, usize)> {
    check(pred.len(), truth.len())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if *t != 0.0 {
            sum += ((p - t) / t).abs();
            n += 1;
        }
    }
    let skipped = pred.len() - n;
    Ok(((n > 0).then(|| sum / n as f64), skipped))
}

/// Coefficient of determination; `None` for constant truth.
pub fn r2(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check(pred.len(), truth.len())?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Ok(None);
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(Some(1.0 - ss_res / ss_tot))
}

/// Unweighted mean of per-class F1 over `num_classes` classes. A class that is
/// neither predicted nor present scores 0.
pub fn macro_f1(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    check(pred.len(), truth.len())?;
    if num_classes == 0 {
        return Err(Error::Invalid("no classes".into()));
    }
    if let Some(bad) = pred.iter().chain(truth).find(|&&c| c >= num_classes) {
        return Err(Error::Invalid(format!("class {bad} out of range for {num_classes} classes")));
    }
    let mut f1 = 0.0;
    for c in 0..num_classes {
        let tp = pred.iter().zip(truth).filter(|(p, t)| **p == c && **t == c).count() as f64;
        let fp = pred.iter().zip(truth).filter(|(p, t)| **p == c && **t != c).count() as f64;
        let fn_ = pred.iter().zip(truth).filter(|(p, t)| **p != c && **t == c).count() as f64;
        if tp > 0.0 {
            f1 += 2.0 * tp / (2.0 * tp + fp + fn_);
        }
    }
    Ok(f1 / num_classes as f64)
}

fn check(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{a} predictions for {b} truths")));
    }
    if a == 0 {
        return Err(Error::Invalid("empty input".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub channel: String,
    pub rmse: f64,
    pub mape: Option<f64>,
    pub mape_zero_truth: usize,
    pub r2: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub channels: Vec<ChannelMetrics>,
    /// Channel averages; `mape` and `r2` average the channels where they exist.
    pub rmse: Option<f64>,
    pub mape: Option<f64>,
    pub r2: Option<f64>,
    pub macro_f1: Option<f64>,
    pub accuracy: Option<f64>,
}

fn mean_some(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let xs: Vec<f64> = v.flatten().collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// What to score.
#[derive(Clone, Copy, Debug)]
pub enum Scored<'a> {
    /// Per-item engagement vectors, in whatever space the caller chose.
    Engagement { pred: &'a [[f64; 4]], truth: &'a [[f64; 4]] },
    Labels { pred: &'a [usize], truth: &'a [usize], num_classes: usize },
}

pub fn compute_metrics(scored: Scored<'_>) -> Result<MetricReport> {
    match scored {
        Scored::Engagement { pred, truth } => {
            check(pred.len(), truth.len())?;
            let mut channels = Vec::with_capacity(4);
            for (c, name) in CHANNELS.iter().enumerate() {
                let p: Vec<f64> = pred.iter().map(|v| v[c]).collect();
                let t: Vec<f64> = truth.iter().map(|v| v[c]).collect();
                let (m, zeros) = mape(&p, &t)?;
                channels.push(ChannelMetrics {
                    channel: name.to_string(),
                    rmse: rmse(&p, &t)?,
                    mape: m,
                    mape_zero_truth: zeros,
                    r2: r2(&p, &t)?,
                });
            }
            Ok(MetricReport {
                n: pred.len(),
                rmse: Some(channels.iter().map(|c| c.rmse).sum::<f64>() / 4.0),
                mape: mean_some(channels.iter().map(|c| c.mape)),
                r2: mean_some(channels.iter().map(|c| c.r2)),
                channels,
                ..Default::default()
            })
        }
        Scored::Labels { pred, truth, num_classes } => {
            let f1 = macro_f1(pred, truth, num_classes)?;
            let acc = pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64;
            Ok(MetricReport {
                n: pred.len(),
                macro_f1: Some(f1),
                accuracy: Some(acc),
                ..Default::default()
            })
        }
    }
}
