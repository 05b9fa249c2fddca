//! Row layout of a post's input sequence.
//!
//! History row `j` (for `j = 0..m`) sits at observation time `t_j`, with `t_0`
//! the creation time and `e_0 = 0`. It carries
//! `[φ_t(t_j − t_{j−1}), φ_e(log1p e_j), φ_t(t_{j+1} − t_j), φ_e(ê_j)]` and its
//! output predicts `e_{j+1}`. Query row `k` sits at `τ_k = τ_0 + k·step`, carries
//! `[φ_t(τ_k − t_m), φ_e(log1p e_m), φ_t(step), φ_e(ê_k)]` and predicts the
//! increment over `(τ_k, τ_{k+1}]`; row 0 also absorbs `(t_m, τ_0]`.

use crate::data::PostRecord;
use crate::embeddings::TimePoint;
use crate::error::{Error, Result};
use crate::ssm::IntervalInput;

/// Observed intervals of one post, creation row first.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    /// `t_0 .. t_m`.
    pub times: Vec<f64>,
    /// Raw interval counts, `e_0 = 0`.
    pub counts: Vec<[f64; 4]>,
}

impl History {
    /// Observations inside `[t0, t0 + tau_obs]`, or all of them with `None`.
    pub fn from_post(post: &PostRecord, tau_obs: Option<f64>) -> Self {
        let obs = match tau_obs {
            Some(tau) => post.window(tau),
            None => &post.observations[..],
        };
        let mut times = Vec::with_capacity(obs.len() + 1);
        let mut counts = Vec::with_capacity(obs.len() + 1);
        times.push(post.t0);
        counts.push([0.0; 4]);
        for o in obs {
            times.push(o.t);
            counts.push(o.e.as_f64());
        }
        Self { times, counts }
    }

    /// Number of observed intervals `m`.
    pub fn m(&self) -> usize {
        self.times.len() - 1
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("creation row")
    }

    pub fn cumulative(&self) -> [f64; 4] {
        let mut acc = [0.0; 4];
        for c in &self.counts {
            for k in 0..4 {
                acc[k] += c[k];
            }
        }
        acc
    }

    /// Teacher-forcing values for history rows: `ê_j = log1p e_j`.
    pub fn truth_hats(&self) -> Vec<[f64; 4]> {
        self.counts[..self.m()].iter().map(|c| c.map(f64::ln_1p)).collect()
    }

    /// Training targets: `log1p e_{j+1}` for each history row.
    pub fn targets(&self) -> Vec<[f64; 4]> {
        self.counts[1..].iter().map(|c| c.map(f64::ln_1p)).collect()
    }
}

/// Everything the network consumes per row, before embedding.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RowPlan {
    pub inputs: Vec<IntervalInput>,
    pub points: Vec<TimePoint>,
    /// Real time since the previous row; 0 for the first.
    pub gaps: Vec<f64>,
    pub n_history: usize,
}

impl RowPlan {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn push(&mut self, inp: IntervalInput, point: TimePoint, gap: f64) {
        self.inputs.push(inp);
        self.points.push(point);
        self.gaps.push(gap);
    }
}

/// History row `j`. `e_hat` is in log space.
pub fn history_row(h: &History, j: usize, t_ref: f64, e_hat: [f64; 4]) -> (IntervalInput, TimePoint, f64) {
    let back = if j == 0 { 0.0 } else { h.times[j] - h.times[j - 1] };
    let running: f64 = h.counts[..=j].iter().map(|c| c.iter().sum::<f64>()).sum();
    (
        IntervalInput {
            back_gap: back,
            eng: h.counts[j].map(f64::ln_1p),
            fwd_gap: h.times[j + 1] - h.times[j],
            e_hat,
        },
        TimePoint {
            t: h.times[j],
            t_ref,
            e_total: running,
        },
        back,
    )
}

/// Query row `k` at `tau0 + k·step`. `e_hat` is in log space.
pub fn query_row(h: &History, k: usize, tau0: f64, step: f64, e_hat: [f64; 4]) -> (IntervalInput, TimePoint, f64) {
    let m = h.m();
    let tau = tau0 + k as f64 * step;
    let gap = match (k, m) {
        (0, 0) => 0.0,
        (0, _) => tau0 - h.times[m - 1],
        _ => step,
    };
    (
        IntervalInput {
            back_gap: tau - h.times[m],
            eng: h.counts[m].map(f64::ln_1p),
            fwd_gap: step,
            e_hat,
        },
        TimePoint {
            t: tau,
            t_ref: tau,
            e_total: 0.0,
        },
        gap,
    )
}

pub fn check_query(h: &History, tau0: f64, step: f64) -> Result<()> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Domain(format!("rollout step must be > 0, got {step}")));
    }
    if !(tau0 >= h.last_time()) {
        return Err(Error::Invalid(format!(
            "query start {tau0} precedes the last observation {}",
            h.last_time()
        )));
    }
    Ok(())
}

/// All `m` history rows followed by `k_count` query rows.
pub fn build_plan(
    h: &History,
    t_ref: f64,
    history_hats: &[[f64; 4]],
    query: Option<(f64, f64, &[[f64; 4]])>,
) -> Result<RowPlan> {
    let m = h.m();
    if history_hats.len() != m {
        return Err(Error::Shape(format!("{} history estimates for {m} rows", history_hats.len())));
    }
    let mut plan = RowPlan {
        n_history: m,
        ..Default::default()
    };
    for (j, hat) in history_hats.iter().enumerate() {
        let (i, p, g) = history_row(h, j, t_ref, *hat);
        plan.push(i, p, g);
    }
    if let Some((tau0, step, hats)) = query {
        check_query(h, tau0, step)?;
        for (k, hat) in hats.iter().enumerate() {
            let (i, p, g) = query_row(h, k, tau0, step, *hat);
            plan.push(i, p, g);
        }
    }
    Ok(plan)
}

/// Cumulative truth at `t`, linearly interpolated between observation times.
pub fn interpolate_cumulative(h: &History, t: f64) -> [f64; 4] {
    let mut acc = [0.0; 4];
    for j in 1..h.times.len() {
        let (a, b) = (h.times[j - 1], h.times[j]);
        let frac = if t >= b {
            1.0
        } else if t <= a {
            0.0
        } else {
            (t - a) / (b - a)
        };
        if frac == 0.0 {
            break;
        }
        for k in 0..4 {
            acc[k] += frac * h.counts[j][k];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Engagement, ObservationRecord, UserMeta};

    fn post() -> PostRecord {
        PostRecord {
            post_id: "p".into(),
            t0: 1000.0,
            text: String::new(),
            user: UserMeta::default(),
            opinion: None,
            observations: [(1300.0, [3, 0, 1, 0]), (1900.0, [1, 1, 0, 0]), (4000.0, [2, 0, 0, 5])]
                .iter()
                .map(|&(t, c)| ObservationRecord { t, e: Engagement::from_array(c) })
                .collect(),
        }
    }

    #[test]
    fn history_rows_shift_targets() {
        let h = History::from_post(&post(), Some(1000.0));
        assert_eq!(h.m(), 2);
        let plan = build_plan(&h, 2000.0, &h.truth_hats(), None).unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(plan.gaps, vec![0.0, 300.0]);
        assert_eq!(plan.inputs[0].fwd_gap, 300.0);
        assert_eq!(plan.inputs[1].eng, [4f64.ln(), 0.0, 2f64.ln(), 0.0]);
        assert_eq!(h.targets()[1], [2f64.ln(), 2f64.ln(), 0.0, 0.0]);
        assert_eq!(plan.points[1].e_total, 4.0);
    }

    #[test]
    fn query_rows_anchor_on_last_observation() {
        let h = History::from_post(&post(), Some(1000.0));
        let hats = [[0.0; 4]; 3];
        let plan = build_plan(&h, 2000.0, &h.truth_hats(), Some((2000.0, 300.0, &hats))).unwrap();
        assert_eq!(plan.len(), 5);
        assert_eq!(plan.gaps[2..], [700.0, 300.0, 300.0]);
        assert_eq!(plan.inputs[3].back_gap, 400.0);
        assert_eq!(plan.points[4].t_ref, plan.points[4].t);
        assert!(build_plan(&h, 2000.0, &h.truth_hats(), Some((1800.0, 300.0, &hats))).is_err());
    }

    #[test]
    fn empty_history_query() {
        let h = History::from_post(&post(), Some(100.0));
        assert_eq!(h.m(), 0);
        let hats = [[0.0; 4]; 2];
        let plan = build_plan(&h, 1100.0, &[], Some((1100.0, 60.0, &hats))).unwrap();
        assert_eq!(plan.gaps, vec![0.0, 60.0]);
        assert_eq!(plan.inputs[0].back_gap, 100.0);
    }

    #[test]
    fn interpolation() {
        let h = History::from_post(&post(), None);
        assert_eq!(interpolate_cumulative(&h, 1000.0), [0.0; 4]);
        assert_eq!(interpolate_cumulative(&h, 1150.0), [1.5, 0.0, 0.5, 0.0]);
        assert_eq!(interpolate_cumulative(&h, 9e9), h.cumulative());
    }
}
