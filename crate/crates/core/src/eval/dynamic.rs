//! Rolling opinion-level forecasts with empirical bands.
//!
//! Starting at frame start `F` plus the shortest window, a full trajectory is
//! re-issued every `refresh` from all data seen so far. For a window `W`, the
//! targets are `F + W + k·step` for `k = 1..=horizon/step`; every issue made at
//! or after `F + W` and before a target contributes one forecast for it. The
//! band is the 2.5/97.5 percentile of those forecasts and the point is the
//! latest one.

use crate::data::PostRecord;
use crate::embeddings::SECONDS_PER_DAY;
use crate::error::{Error, Result};
use crate::model::two_tier::group_cumulative;
use crate::model::Model;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicConfig {
    pub windows_days: Vec<f64>,
    pub horizon: f64,
    pub step: f64,
    pub refresh: f64,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        Self {
            windows_days: vec![3.0, 7.0, 10.0],
            horizon: 28.0 * SECONDS_PER_DAY,
            step: 300.0,
            refresh: 6.0 * 3600.0,
        }
    }
}

impl DynamicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.windows_days.is_empty() || self.windows_days.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("windows must be positive".into()));
        }
        if !(self.step > 0.0) || !(self.horizon >= self.step) || !(self.refresh >= self.step) {
            return Err(Error::Config("need 0 < step <= refresh and step <= horizon".into()));
        }
        let on_grid = |x: f64| ((x / self.step).round() * self.step - x).abs() < 1e-6;
        if !on_grid(self.refresh) || self.windows_days.iter().any(|w| !on_grid(w * SECONDS_PER_DAY)) {
            return Err(Error::Config("windows and refresh must be multiples of the step".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicForecastRecord {
    pub window_days: f64,
    pub target_time: f64,
    /// Issue time of the point forecast.
    pub issue_time: f64,
    pub n_issues: usize,
    pub point: [f64; 4],
    pub lower: [f64; 4],
    pub upper: [f64; 4],
    /// Observed group cumulative, when the data reaches the target.
    pub truth: Option<[f64; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub window_days: f64,
    pub records: usize,
    /// Share of (target, channel) pairs whose truth lies inside the band.
    pub coverage: Option<f64>,
    pub scored_targets: usize,
    /// Mean band width over the target times shared by every window.
    pub shared_band_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicForecast {
    pub frame_start: f64,
    pub issues: usize,
    pub summaries: Vec<WindowSummary>,
    pub records: Vec<DynamicForecastRecord>,
}

/// Linear-interpolation percentile of sorted values, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, f) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + f * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

struct Issue {
    time: f64,
    cumulative: Vec<[f64; 4]>,
}

/// Band and point for one target from the issues that precede it.
fn band(issues: &[&Issue], target: f64, step: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let values: Vec<[f64; 4]> = issues
        .iter()
        .map(|i| i.cumulative[((target - i.time) / step).round() as usize - 1])
        .collect();
    let point = *values.last().expect("at least one issue");
    let mut lower = [0.0; 4];
    let mut upper = [0.0; 4];
    for c in 0..4 {
        let mut v: Vec<f64> = values.iter().map(|x| x[c]).collect();
        v.sort_by(f64::total_cmp);
        lower[c] = percentile(&v, 0.025).min(point[c]);
        upper[c] = percentile(&v, 0.975).max(point[c]);
    }
    (point, lower, upper)
}

/// Run the rolling protocol on one opinion group from `frame_start`.
pub fn dynamic_opinion_forecast(
    model: &Model,
    group: &[PostRecord],
    frame_start: f64,
    cfg: &DynamicConfig,
) -> Result<DynamicForecast> {
    cfg.validate()?;
    let group: Vec<PostRecord> = group.iter().filter(|p| p.t0 >= frame_start).cloned().collect();
    let data_end = group
        .iter()
        .map(|p| p.t0)
        .fold(f64::NEG_INFINITY, f64::max);
    let windows: Vec<f64> = cfg.windows_days.iter().map(|d| d * SECONDS_PER_DAY).collect();
    let w_min = windows.iter().cloned().fold(f64::INFINITY, f64::min);
    let w_max = windows.iter().cloned().fold(0.0, f64::max);
    if group.is_empty() || frame_start + w_max > data_end {
        return Err(Error::Invalid(format!(
            "a {:.1}-day window needs posts beyond {}, data ends at {}",
            w_max / SECONDS_PER_DAY,
            frame_start + w_max,
            data_end
        )));
    }
    let step = cfg.step;
    let end = frame_start + w_max + cfg.horizon;
    let mut times = Vec::new();
    let mut t = frame_start + w_min;
    while t < end {
        times.push(t);
        t += cfg.refresh;
    }
    let issues = times
        .par_iter()
        .map(|&time| {
            if group.iter().all(|p| p.t0 > time) {
                let k = ((end - time) / step).floor() as usize;
                return Ok(Issue { time, cumulative: vec![[0.0; 4]; k] });
            }
            let f = model.two_tier_forecast(&group, time, step, end - time)?;
            Ok(Issue {
                time,
                cumulative: f.series.cumulative,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let k_count = (cfg.horizon / step).round() as usize;
    let shared = (frame_start + w_max, frame_start + w_min + cfg.horizon);
    let mut records = Vec::with_capacity(windows.len() * k_count);
    let mut summaries = Vec::with_capacity(windows.len());
    for (&w, &days) in windows.iter().zip(&cfg.windows_days) {
        let first = frame_start + w;
        let mine: Vec<&Issue> = issues.iter().filter(|i| i.time >= first - 1e-6).collect();
        let recs: Vec<DynamicForecastRecord> = (1..=k_count)
            .into_par_iter()
            .map(|k| {
                let target = first + k as f64 * step;
                let n = mine.partition_point(|i| i.time < target - 1e-6);
                let before = &mine[..n];
                let (point, lower, upper) = band(before, target, step);
                DynamicForecastRecord {
                    window_days: days,
                    target_time: target,
                    issue_time: before[n - 1].time,
                    n_issues: n,
                    point,
                    lower,
                    upper,
                    truth: (target <= data_end).then(|| group_cumulative(&group, target)),
                }
            })
            .collect();
        let (mut inside, mut scored) = (0usize, 0usize);
        let (mut width, mut n_shared) = (0.0, 0usize);
        for r in &recs {
            if let Some(t) = r.truth {
                scored += 1;
                inside += (0..4).filter(|&c| r.lower[c] <= t[c] && t[c] <= r.upper[c]).count();
            }
            if r.target_time > shared.0 && r.target_time <= shared.1 + 1e-6 {
                width += (0..4).map(|c| r.upper[c] - r.lower[c]).sum::<f64>() / 4.0;
                n_shared += 1;
            }
        }
        summaries.push(WindowSummary {
            window_days: days,
            records: recs.len(),
            coverage: (scored > 0).then(|| inside as f64 / (4 * scored) as f64),
            scored_targets: scored,
            shared_band_width: width / n_shared.max(1) as f64,
        });
        records.extend(recs);
    }
    Ok(DynamicForecast {
        frame_start,
        issues: issues.len(),
        summaries,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_reference_values() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert_eq!(percentile(&v, 1.0), 5.0);
        assert!((percentile(&v, 0.025) - 1.1).abs() < 1e-12);
        assert_eq!(percentile(&[7.0], 0.975), 7.0);
    }

    #[test]
    fn single_issue_collapses_band() {
        let issue = Issue {
            time: 0.0,
            cumulative: vec![[1.0, 2.0, 3.0, 4.0]; 10],
        };
        let (p, l, u) = band(&[&issue], 300.0 * 4.0, 300.0);
        assert_eq!(p, l);
        assert_eq!(p, u);
    }

    #[test]
    fn band_contains_point() {
        let a = Issue { time: 0.0, cumulative: vec![[5.0; 4]; 10] };
        let b = Issue { time: 300.0, cumulative: vec![[1.0; 4]; 10] };
        let c = Issue { time: 600.0, cumulative: vec![[0.0; 4]; 10] };
        let (p, l, u) = band(&[&a, &b, &c], 1500.0, 300.0);
        assert_eq!(p, [0.0; 4]);
        assert!(l[0] <= p[0] && p[0] <= u[0]);
        assert!(u[0] > 4.0);
    }
}
