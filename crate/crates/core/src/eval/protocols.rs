//! Per-post evaluation protocols: overall totals, the early-window sweep and
//! staged next-interval prediction. Scores are computed in `log1p` space.

use super::metrics::{compute_metrics, MetricReport, Scored};
use crate::data::PostRecord;
use crate::error::{Error, Result};
use crate::model::sequence::History;
use crate::model::Model;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_CHECKPOINTS_MINUTES: [u32; 10] = [15, 30, 45, 60, 90, 120, 180, 240, 300, 360];

/// What the protocols ask of a model.
pub trait Predictor: Sync {
    /// Final engagement counts from the window `[t0, t0 + tau_obs]`.
    fn predict_total(&self, post: &PostRecord, tau_obs: f64) -> Result<[f64; 4]>;
    /// Counts of the interval ending at `h`'s last time.
    fn predict_next(&self, post: &PostRecord, h: &History) -> Result<[f64; 4]>;
    /// Opinion class probabilities.
    fn classify(&self, post: &PostRecord, tau_obs: f64) -> Result<Vec<f64>>;
}

impl Predictor for Model {
    fn predict_total(&self, post: &PostRecord, tau_obs: f64) -> Result<[f64; 4]> {
        Model::predict_total(self, post, tau_obs)
    }

    fn predict_next(&self, post: &PostRecord, h: &History) -> Result<[f64; 4]> {
        Model::predict_next(self, post, h)
    }

    fn classify(&self, post: &PostRecord, tau_obs: f64) -> Result<Vec<f64>> {
        self.classify_opinion(post, tau_obs)
    }
}

fn log1p4(v: [f64; 4]) -> [f64; 4] {
    v.map(|x| x.max(0.0).ln_1p())
}

fn sorted(posts: &[PostRecord]) -> Vec<&PostRecord> {
    let mut v: Vec<&PostRecord> = posts.iter().collect();
    v.sort_by(|a, b| a.post_id.cmp(&b.post_id));
    v
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// One scored post.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostPrediction {
    pub post_id: String,
    pub tau_obs: f64,
    pub observed: [f64; 4],
    pub predicted_total: [f64; 4],
    pub true_total: [f64; 4],
    pub opinion: Option<String>,
    pub predicted_opinion: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverallReport {
    pub tau_obs: f64,
    pub forecast: MetricReport,
    /// Carrying the last observed cumulative forward.
    pub baseline: MetricReport,
    /// `1 − rmse / baseline rmse`.
    pub improvement: f64,
    pub classification: Option<MetricReport>,
    pub predictions: Vec<PostPrediction>,
}

/// Final-total forecasting and, with `classes`, opinion classification at one window.
pub fn overall_eval(
    predictor: &dyn Predictor,
    posts: &[PostRecord],
    tau_obs: f64,
    classes: Option<&[String]>,
) -> Result<OverallReport> {
    if posts.is_empty() {
        return Err(Error::Invalid("no posts to evaluate".into()));
    }
    let rows = sorted(posts)
        .into_par_iter()
        .map(|p| {
            let observed = p.cumulative(p.window(tau_obs).len()).as_f64();
            let predicted_opinion = match classes {
                Some(names) => {
                    let probs = predictor.classify(p, tau_obs)?;
                    Some(names.get(argmax(&probs)).cloned().ok_or_else(|| {
                        Error::Shape(format!("{} class probabilities for {} classes", probs.len(), names.len()))
                    })?)
                }
                None => None,
            };
            Ok(PostPrediction {
                post_id: p.post_id.clone(),
                tau_obs,
                observed,
                predicted_total: predictor.predict_total(p, tau_obs)?,
                true_total: p.total().as_f64(),
                opinion: p.opinion.clone(),
                predicted_opinion,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<_> = rows.iter().map(|r| log1p4(r.true_total)).collect();
    let pred: Vec<_> = rows.iter().map(|r| log1p4(r.predicted_total)).collect();
    let carry: Vec<_> = rows.iter().map(|r| log1p4(r.observed)).collect();
    let forecast = compute_metrics(Scored::Engagement { pred: &pred, truth: &truth })?;
    let baseline = compute_metrics(Scored::Engagement { pred: &carry, truth: &truth })?;
    let classification = match classes {
        Some(names) => {
            let index = |s: &Option<String>| -> Result<usize> {
                let s = s.as_deref().ok_or_else(|| Error::Invalid("unlabelled post in classification".into()))?;
                names
                    .iter()
                    .position(|n| n == s)
                    .ok_or_else(|| Error::Invalid(format!("unknown opinion label {s}")))
            };
            let t = rows.iter().map(|r| index(&r.opinion)).collect::<Result<Vec<_>>>()?;
            let p = rows.iter().map(|r| index(&r.predicted_opinion)).collect::<Result<Vec<_>>>()?;
            Some(compute_metrics(Scored::Labels { pred: &p, truth: &t, num_classes: names.len() })?)
        }
        None => None,
    };
    let (a, b) = (forecast.rmse.unwrap_or(0.0), baseline.rmse.unwrap_or(0.0));
    Ok(OverallReport {
        tau_obs,
        improvement: if b > 0.0 { 1.0 - a / b } else { 0.0 },
        forecast,
        baseline,
        classification,
        predictions: rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub minutes: u32,
    pub n: usize,
    pub rmse: f64,
    pub baseline_rmse: f64,
    pub report: MetricReport,
}

/// Total-engagement RMSE as a function of the observation window.
pub fn early_prediction_sweep(predictor: &dyn Predictor, posts: &[PostRecord], minutes: &[u32]) -> Result<Vec<SweepRow>> {
    if minutes.is_empty() {
        return Err(Error::Invalid("no checkpoints".into()));
    }
    for &m in minutes {
        let tau = m as f64 * 60.0;
        if let Some(p) = posts.iter().find(|p| p.t0 + tau > p.last_time()) {
            return Err(Error::Invalid(format!(
                "checkpoint {m} min exceeds the history of post {}",
                p.post_id
            )));
        }
    }
    minutes
        .iter()
        .map(|&m| {
            let r = overall_eval(predictor, posts, m as f64 * 60.0, None)?;
            Ok(SweepRow {
                minutes: m,
                n: r.forecast.n,
                rmse: r.forecast.rmse.unwrap_or(0.0),
                baseline_rmse: r.baseline.rmse.unwrap_or(0.0),
                report: r.forecast,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Every transition at least 6 h after creation, from exactly the
    /// preceding 6 h of history.
    Fixed6h,
    /// Forward gap at most 1 hour.
    Early,
    /// Forward gap at most 24 hours.
    Mid,
    /// Forward gap at most one week.
    Late,
}

const SIX_HOURS: f64 = 6.0 * 3600.0;

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Fixed6h, Stage::Early, Stage::Mid, Stage::Late];

    pub fn max_gap(self) -> f64 {
        match self {
            Stage::Fixed6h => f64::INFINITY,
            Stage::Early => 3600.0,
            Stage::Mid => 24.0 * 3600.0,
            Stage::Late => 7.0 * 24.0 * 3600.0,
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed6h" => Ok(Stage::Fixed6h),
            "early" => Ok(Stage::Early),
            "mid" => Ok(Stage::Mid),
            "late" => Ok(Stage::Late),
            _ => Err(Error::Config(format!("unknown stage {s:?}"))),
        }
    }
}

/// History for predicting observation `i` (1-based, `t_i`) of `post`.
/// The last count is a placeholder for the unknown target.
pub fn next_history(post: &PostRecord, i: usize, stage: Stage) -> Option<History> {
    let obs = &post.observations;
    let target = obs[i - 1].t;
    let mut times = vec![post.t0];
    let mut counts = vec![[0.0; 4]];
    let earlier = obs[..i - 1].iter();
    if stage == Stage::Fixed6h {
        let start = target - SIX_HOURS;
        if start < post.t0 {
            return None;
        }
        times[0] = start;
        for o in earlier.filter(|o| o.t >= start) {
            times.push(o.t);
            counts.push(o.e.as_f64());
        }
    } else {
        let back = if i >= 2 { obs[i - 2].t } else { post.t0 };
        if target - back > stage.max_gap() {
            return None;
        }
        for o in earlier {
            times.push(o.t);
            counts.push(o.e.as_f64());
        }
    }
    times.push(target);
    counts.push([0.0; 4]);
    Some(History { times, counts })
}

/// Next-interval prediction over the transitions that qualify for `stage`.
pub fn staged_next_eval(predictor: &dyn Predictor, posts: &[PostRecord], stage: Stage) -> Result<MetricReport> {
    let per_post = sorted(posts)
        .into_par_iter()
        .map(|p| {
            let mut out = Vec::new();
            for i in 1..=p.observations.len() {
                if let Some(h) = next_history(p, i, stage) {
                    let pred = predictor.predict_next(p, &h)?;
                    out.push((log1p4(pred), p.observations[i - 1].e.log1p()));
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let (pred, truth): (Vec<_>, Vec<_>) = per_post.into_iter().flatten().unzip();
    if pred.is_empty() {
        return Err(Error::Invalid(format!("no transitions qualify for stage {stage:?}")));
    }
    compute_metrics(Scored::Engagement { pred: &pred, truth: &truth })
}
