//! Group-level forecasting.
//!
//! Tier 1 rolls every post of an opinion group forward independently. Tier 2
//! runs one gated block over the group's posts in creation order, with rows
//! `[h_i ; log1p observed_i]`, time rows `PE(t_i, t_last)` and gaps between
//! creation times. Its last normed state feeds a linear head giving per-channel
//! `level` and `slope`. The cumulative sum of per-post rollout increments up to
//! step `k` is scaled by `exp(level + slope · ln(1 + k·step / 1 day))`, which
//! lets the group keep growing after the current posts have gone quiet.

use super::sequence::{interpolate_cumulative, History};
use super::stream::ForecastSeries;
use super::Model;
use crate::data::PostRecord;
use crate::embeddings::{TimePoint, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::numerics::ops::rms_norm_node;
use crate::numerics::{Graph, NodeId, ParamStore, Tensor};
use crate::ssm::icmamba_block;

/// Tier-1 view of one post at the issue time.
#[derive(Clone, Debug, PartialEq)]
pub struct PostSummary {
    pub post_id: String,
    pub t0: f64,
    pub hidden: Vec<f64>,
    pub observed: [f64; 4],
    pub increments: Vec<[f64; 4]>,
}

/// Everything tier 2 needs for one group at one issue time.
#[derive(Clone, Debug, PartialEq)]
pub struct Tier2Input {
    pub issue_time: f64,
    pub step: f64,
    pub horizon_steps: usize,
    /// Posts still within their lifetime, sorted by creation time then id.
    pub posts: Vec<PostSummary>,
    /// Observed engagement of every post created by the issue time.
    pub observed_total: [f64; 4],
}

impl Tier2Input {
    pub fn summed_increments(&self) -> Vec<[f64; 4]> {
        let mut out = vec![[0.0; 4]; self.horizon_steps];
        for p in &self.posts {
            for (o, inc) in out.iter_mut().zip(&p.increments) {
                for c in 0..4 {
                    o[c] += inc[c];
                }
            }
        }
        out
    }

    /// Running sum of [`Self::summed_increments`].
    pub fn summed_cumulative(&self) -> Vec<[f64; 4]> {
        let mut acc = [0.0; 4];
        self.summed_increments()
            .into_iter()
            .map(|inc| {
                for c in 0..4 {
                    acc[c] += inc[c];
                }
                acc
            })
            .collect()
    }
}

/// Corrected group forecast.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupForecast {
    pub series: ForecastSeries,
    pub level: [f64; 4],
    pub slope: [f64; 4],
}

/// `ln(1 + k·step / 1 day)` for `k = 1..=K`.
pub fn horizon_features(step: f64, k: usize) -> Vec<f64> {
    (1..=k).map(|i| (i as f64 * step / SECONDS_PER_DAY).ln_1p()).collect()
}

/// Observed cumulative engagement of `group` at `t`, interpolated between
/// observation times. Posts created after `t` contribute nothing.
pub fn group_cumulative(group: &[PostRecord], t: f64) -> [f64; 4] {
    let mut acc = [0.0; 4];
    for p in group.iter().filter(|p| p.t0 <= t) {
        let c = interpolate_cumulative(&History::from_post(p, None), t);
        for k in 0..4 {
            acc[k] += c[k];
        }
    }
    acc
}

impl Model {
    /// Tier-1 summaries at `issue_time`. Posts past their lifetime only add to
    /// the observed total.
    pub fn summarize_group(&self, group: &[PostRecord], issue_time: f64, step: f64, k_count: usize) -> Result<Tier2Input> {
        let mut posts: Vec<&PostRecord> = group.iter().filter(|p| p.t0 <= issue_time).collect();
        if posts.is_empty() {
            return Err(Error::Invalid(format!("no post created by {issue_time}")));
        }
        posts.sort_by(|a, b| a.t0.total_cmp(&b.t0).then_with(|| a.post_id.cmp(&b.post_id)));
        let mut out = Vec::new();
        let mut observed_total = [0.0; 4];
        for p in posts {
            let tau = issue_time - p.t0;
            let observed = p.cumulative(p.window(tau).len()).as_f64();
            for c in 0..4 {
                observed_total[c] += observed[c];
            }
            if tau >= self.config.post_lifetime {
                continue;
            }
            let r = self.rollout(p, tau, step, k_count, None)?;
            out.push(PostSummary {
                post_id: p.post_id.clone(),
                t0: p.t0,
                hidden: r.anchor_hidden,
                observed,
                increments: r.increments,
            });
        }
        Ok(Tier2Input {
            issue_time,
            step,
            horizon_steps: k_count,
            posts: out,
            observed_total,
        })
    }

    /// `1×8` node holding `[level; slope]`.
    pub fn tier2_node(&self, g: &mut Graph, store: &ParamStore, input: &Tier2Input) -> Result<NodeId> {
        let t2 = &self.params.tier2;
        let n = input.posts.len();
        if n == 0 {
            return Err(Error::Invalid("empty group".into()));
        }
        let d = self.config.d_model;
        let mut rows = Vec::with_capacity(n * (d + 4));
        for p in &input.posts {
            if p.hidden.len() != d {
                return Err(Error::Shape(format!("summary hidden width {} != {d}", p.hidden.len())));
            }
            rows.extend_from_slice(&p.hidden);
            rows.extend(p.observed.map(f64::ln_1p));
        }
        let u = g.constant(Tensor::new(n, d + 4, rows)?);
        let t_last = input.posts[n - 1].t0;
        let points: Vec<TimePoint> = input
            .posts
            .iter()
            .map(|p| TimePoint { t: p.t0, t_ref: t_last, e_total: 0.0 })
            .collect();
        let te = if self.config.ablation.without_time {
            let c = g.frozen_param(store, self.params.time_const);
            g.broadcast_rows(c, n)
        } else {
            let mut sub = Graph::new();
            let r = self.params.time.rows_node(&mut sub, store, &points)?;
            g.constant(sub.value(r).clone())
        };
        let gaps: Vec<f64> = (0..n)
            .map(|i| if i == 0 { 0.0 } else { input.posts[i].t0 - input.posts[i - 1].t0 })
            .collect();
        let tr = icmamba_block(g, store, &t2.block, u, te, &gaps, self.config.s_ref, None)?;
        let scale = g.param(store, t2.norm);
        let z = rms_norm_node(g, tr.out, scale);
        let last = g.slice_rows(z, n - 1, n);
        let w = g.param(store, t2.head_w);
        let b = g.param(store, t2.head_b);
        let o = g.matmul(last, w);
        Ok(g.add_row(o, b))
    }

    /// Correction factors at 1-based horizon steps `ks`, `|ks|×4`, on the tape.
    pub fn tier2_factors_node(&self, g: &mut Graph, store: &ParamStore, input: &Tier2Input, ks: &[usize]) -> Result<NodeId> {
        let ls = self.tier2_node(g, store, input)?;
        let j = ks.len();
        let level = g.slice_cols(ls, 0, 4);
        let slope = g.slice_cols(ls, 4, 8);
        let f: Vec<f64> = ks.iter().map(|&k| (k as f64 * input.step / SECONDS_PER_DAY).ln_1p()).collect();
        let feat = g.constant(Tensor::new(j, 1, f)?);
        let lv = g.broadcast_rows(level, j);
        let sl = g.matmul(feat, slope);
        let z = g.add(lv, sl);
        Ok(g.exp(z))
    }

    /// Apply tier 2 to precomputed summaries. Without active posts the forecast
    /// stays at the observed total.
    pub fn tier2_forecast(&self, input: &Tier2Input) -> Result<GroupForecast> {
        let (level, slope) = if input.posts.is_empty() {
            ([0.0; 4], [0.0; 4])
        } else {
            let mut g = Graph::new();
            let ls = self.tier2_node(&mut g, &self.store, input)?;
            let v = g.value(ls).data().to_vec();
            ([v[0], v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]])
        };
        let feats = horizon_features(input.step, input.horizon_steps);
        let obs = input.observed_total;
        let mut best = obs;
        let cumulative = input
            .summed_cumulative()
            .into_iter()
            .zip(&feats)
            .map(|(cum, f)| {
                for c in 0..4 {
                    best[c] = best[c].max(obs[c] + cum[c] * (level[c] + slope[c] * f).exp());
                }
                best
            })
            .collect();
        Ok(GroupForecast {
            series: ForecastSeries::from_cumulative(input.issue_time, input.step, obs, cumulative),
            level,
            slope,
        })
    }

    /// Opinion-level forecast over `horizon` from `issue_time`.
    pub fn two_tier_forecast(&self, group: &[PostRecord], issue_time: f64, step: f64, horizon: f64) -> Result<GroupForecast> {
        if !(step > 0.0) || !(horizon >= step) {
            return Err(Error::Domain(format!("need 0 < step <= horizon, got {step}, {horizon}")));
        }
        let k = (horizon / step).floor() as usize;
        let input = self.summarize_group(group, issue_time, step, k)?;
        self.tier2_forecast(&input)
    }
}
