//! Heavy-tail summaries of engagement totals.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// `P(X ≥ k)` at every distinct observed `k`, ascending.
pub fn eccdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        if out.last().map(|l| l.0) != Some(x) {
            out.push((x, (v.len() - i) as f64 / n));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub x_min: f64,
    pub n_tail: usize,
    /// `None` when every tail value equals `x_min` and the estimate diverges.
    pub alpha: Option<f64>,
}

/// Continuous maximum-likelihood exponent `1 + n / Σ ln(x / x_min)` over `x ≥ x_min`.
pub fn power_law_alpha(values: &[f64], x_min: f64) -> Result<TailFit> {
    if !(x_min > 0.0) {
        return Err(Error::Domain(format!("x_min must be > 0, got {x_min}")));
    }
    if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain("values must be positive and finite".into()));
    }
    let tail: Vec<f64> = values.iter().copied().filter(|&x| x >= x_min).collect();
    if tail.is_empty() {
        return Err(Error::Invalid(format!("no values at or above x_min = {x_min}")));
    }
    let s: f64 = tail.iter().map(|x| (x / x_min).ln()).sum();
    Ok(TailFit {
        x_min,
        n_tail: tail.len(),
        alpha: (s > 0.0).then(|| 1.0 + tail.len() as f64 / s),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelInsight {
    pub channel: String,
    pub n: usize,
    pub fit: Option<TailFit>,
    pub eccdf: Vec<(f64, f64)>,
}

/// ECCDF and tail exponent of positive values.
pub fn eccdf_and_alpha(values: &[f64], x_min: f64) -> Result<(Vec<(f64, f64)>, TailFit)> {
    let fit = power_law_alpha(values, x_min)?;
    Ok((eccdf(values), fit))
}

/// Per-channel insights over post totals; zero totals are left out.
pub fn channel_insights(posts: &[super::PostRecord], x_min: f64) -> Vec<ChannelInsight> {
    super::CHANNELS
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let vals: Vec<f64> = posts
                .iter()
                .map(|p| p.total().as_f64()[c])
                .filter(|v| *v > 0.0)
                .collect();
            ChannelInsight {
                channel: name.to_string(),
                n: vals.len(),
                fit: power_law_alpha(&vals, x_min).ok(),
                eccdf: eccdf(&vals),
            }
        })
        .collect()
}
