//! Recurrent inference: rows are fed one at a time through cached weights, so
//! rollouts of any length run in constant memory and each query row can feed
//! on the previous row's prediction.

use super::sequence::{check_query, history_row, query_row, History};
use super::Model;
use crate::data::PostRecord;
use crate::embeddings::{modulation, rte, TimePoint, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::numerics::activations::softplus;
use crate::numerics::ops::{cross_entropy_node, rms_norm_row, softmax};
use crate::numerics::{Graph, Tensor};
use crate::ssm::{vec_mat, BlockState, BlockWeights, IntervalInput};

/// Output of one row: final-normed hidden state and `log1p` next-step prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub hidden: Vec<f64>,
    pub pred: [f64; 4],
}

struct TimeCache {
    sigma: f64,
    w_p: Tensor,
    freqs: Vec<f64>,
}

impl TimeCache {
    fn pe(&self, p: &TimePoint) -> Result<Vec<f64>> {
        let mut f = Vec::with_capacity(1 + 2 * self.freqs.len());
        f.push(rte(p.t, p.t_ref, self.sigma)?);
        let days = p.t / SECONDS_PER_DAY;
        for &fr in &self.freqs {
            f.push((days * fr).sin());
            f.push((days * fr).cos());
        }
        let m = modulation(p.e_total)?;
        Ok(vec_mat(&f, &self.w_p, &[]).into_iter().map(|v| v * m).collect())
    }
}

/// Stateful single-post stepper.
pub struct Engine<'m> {
    model: &'m Model,
    blocks: Vec<BlockWeights>,
    states: Vec<BlockState>,
    time: Option<TimeCache>,
    time_const: Vec<f64>,
    content: Vec<f64>,
    final_norm: Vec<f64>,
    rows: usize,
}

impl<'m> Engine<'m> {
    pub fn new(model: &'m Model, content: Vec<f64>) -> Self {
        let s = &model.store;
        let p = &model.params;
        let d = model.config.d_emb;
        let time = (!model.config.ablation.without_time).then(|| TimeCache {
            sigma: p.time.sigma(s),
            w_p: s.value(p.time.w_p).clone(),
            freqs: (0..d / 2)
                .map(|i| p.time.ate_base.powf(-((2 * i) as f64) / d as f64))
                .collect(),
        });
        Self {
            model,
            blocks: p.blocks.iter().map(|b| BlockWeights::new(s, b)).collect(),
            states: p.blocks.iter().map(BlockState::new).collect(),
            time,
            time_const: s.value(p.time_const).data().to_vec(),
            content,
            final_norm: s.value(p.final_norm).data().to_vec(),
            rows: 0,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn step(&mut self, inp: &IntervalInput, point: &TimePoint, gap: f64) -> Result<StepOutput> {
        let m = self.model;
        let te_base = match &self.time {
            Some(tc) => tc.pe(point)?,
            None => self.time_const.clone(),
        };
        let te: Vec<f64> = te_base.iter().zip(&self.content).map(|(a, b)| a + b).collect();
        let mut u = m.params.interval.row(&m.store, inp, m.config.s_ref);
        for (w, st) in self.blocks.iter().zip(self.states.iter_mut()) {
            u = w.step(st, &u, &te, gap, m.config.s_ref)?;
        }
        let hidden = rms_norm_row(&u, &self.final_norm);
        let z = m.params.next_head.eval(&m.store, &hidden);
        let pred = [softplus(z[0]), softplus(z[1]), softplus(z[2]), softplus(z[3])];
        if !hidden.iter().chain(&pred).all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("model output at row {}", self.rows)));
        }
        self.rows += 1;
        Ok(StepOutput { hidden, pred })
    }
}

/// Rows streamed over one post, with the `ê` values each row consumed.
#[derive(Clone, Debug, PartialEq)]
pub struct Streamed {
    pub outputs: Vec<StepOutput>,
    pub hats: Vec<[f64; 4]>,
    pub n_history: usize,
}

/// Inference view of a post's history.
#[derive(Clone, Debug, PartialEq)]
pub struct PostForward {
    /// `m×D` hidden states, one per history row.
    pub hidden: Tensor,
    /// Predicted counts of the next interval for each row.
    pub preds: Vec<[f64; 4]>,
}

/// Query-row rollout from a window end.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub tau0: f64,
    pub step: f64,
    /// Predicted counts over `(τ_k, τ_{k+1}]`; zero once the post has expired.
    pub increments: Vec<[f64; 4]>,
    /// Hidden state of query row 0.
    pub anchor_hidden: Vec<f64>,
    /// `log1p` values fed as `ê` to each active query row.
    pub hats: Vec<[f64; 4]>,
}

/// Engagement trajectory at `times[k] = start + (k+1)·step`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ForecastSeries {
    pub times: Vec<f64>,
    pub increments: Vec<[f64; 4]>,
    pub cumulative: Vec<[f64; 4]>,
}

impl ForecastSeries {
    pub fn from_increments(start: f64, step: f64, observed: [f64; 4], increments: Vec<[f64; 4]>) -> Self {
        let mut acc = observed;
        let mut cumulative = Vec::with_capacity(increments.len());
        for inc in &increments {
            for c in 0..4 {
                acc[c] += inc[c];
            }
            cumulative.push(acc);
        }
        Self {
            times: (1..=increments.len()).map(|k| start + k as f64 * step).collect(),
            increments,
            cumulative,
        }
    }

    /// Increments are differences of `cumulative`, starting from `observed`.
    pub fn from_cumulative(start: f64, step: f64, observed: [f64; 4], cumulative: Vec<[f64; 4]>) -> Self {
        let mut prev = observed;
        let increments = cumulative
            .iter()
            .map(|c| {
                let inc = [0, 1, 2, 3].map(|i| c[i] - prev[i]);
                prev = *c;
                inc
            })
            .collect();
        Self {
            times: (1..=cumulative.len()).map(|k| start + k as f64 * step).collect(),
            increments,
            cumulative,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn counts(log: [f64; 4]) -> [f64; 4] {
    log.map(|v| v.exp_m1().max(0.0))
}

impl Model {
    pub fn engine(&self, content: Vec<f64>) -> Engine<'_> {
        Engine::new(self, content)
    }

    /// Stream history rows then `query = (τ_0, step, K)` rows. `pick(row, own)`
    /// returns the `log1p` value fed as `ê` to `row`, given the previous row's
    /// prediction (zero for the first row).
    pub fn stream(
        &self,
        h: &History,
        t_ref: f64,
        query: Option<(f64, f64, usize)>,
        content: Vec<f64>,
        mut pick: impl FnMut(usize, [f64; 4]) -> [f64; 4],
    ) -> Result<Streamed> {
        let m = h.m();
        let k_count = query.map_or(0, |q| q.2);
        if let Some((tau0, step, _)) = query {
            check_query(h, tau0, step)?;
        }
        let mut eng = self.engine(content);
        let mut outputs = Vec::with_capacity(m + k_count);
        let mut hats = Vec::with_capacity(m + k_count);
        let mut own = [0.0; 4];
        for row in 0..m + k_count {
            let hat = pick(row, own);
            let (inp, pt, gap) = if row < m {
                history_row(h, row, t_ref, hat)
            } else {
                let (tau0, step, _) = query.expect("query rows");
                query_row(h, row - m, tau0, step, hat)
            };
            let out = eng.step(&inp, &pt, gap)?;
            own = out.pred;
            hats.push(hat);
            outputs.push(out);
        }
        Ok(Streamed {
            outputs,
            hats,
            n_history: m,
        })
    }

    fn check_window(&self, post: &PostRecord, tau_obs: f64) -> Result<()> {
        if !(tau_obs >= 0.0) || !tau_obs.is_finite() {
            return Err(Error::Domain(format!("observation window must be >= 0, got {tau_obs}")));
        }
        post.check().map_err(|e| Error::Invalid(format!("post {}: {e}", post.post_id)))
    }

    /// History rows inside the window, fed with the model's own predictions.
    pub fn forward_post(&self, post: &PostRecord, tau_obs: f64) -> Result<PostForward> {
        self.check_window(post, tau_obs)?;
        let h = History::from_post(post, Some(tau_obs));
        let content = self.content_vector(post, None)?;
        let s = self.stream(&h, post.t0 + tau_obs, None, content, |_, own| own)?;
        let d = self.config.d_model;
        let data: Vec<f64> = s.outputs.iter().flat_map(|o| o.hidden.clone()).collect();
        Ok(PostForward {
            hidden: Tensor::new(s.outputs.len(), d, data)?,
            preds: s.outputs.iter().map(|o| counts(o.pred)).collect(),
        })
    }

    /// Roll `k_count` query rows forward from the window end. `forced`, when
    /// given, replaces the fed-back predictions (log space, one per query row).
    pub fn rollout(
        &self,
        post: &PostRecord,
        tau_obs: f64,
        step: f64,
        k_count: usize,
        forced: Option<&[[f64; 4]]>,
    ) -> Result<Rollout> {
        self.check_window(post, tau_obs)?;
        if let Some(f) = forced {
            if f.len() < k_count {
                return Err(Error::Shape(format!("{} forced values for {k_count} rows", f.len())));
            }
        }
        let h = History::from_post(post, Some(tau_obs));
        let tau0 = post.t0 + tau_obs;
        let end = post.t0 + self.config.post_lifetime;
        let active = (0..k_count).take_while(|&k| tau0 + k as f64 * step < end).count();
        let content = self.content_vector(post, None)?;
        let m = h.m();
        let rows = active.max(1);
        let s = self.stream(&h, tau0, Some((tau0, step, rows)), content, |row, own| match forced {
            Some(f) if row >= m && row - m < f.len() => f[row - m],
            _ => own,
        })?;
        let mut increments: Vec<[f64; 4]> = s.outputs[m..m + active].iter().map(|o| counts(o.pred)).collect();
        increments.resize(k_count, [0.0; 4]);
        Ok(Rollout {
            tau0,
            step,
            increments,
            anchor_hidden: s.outputs[m].hidden.clone(),
            hats: s.hats[m..m + active].to_vec(),
        })
    }

    /// Predicted engagement trajectory over `(τ_obs, τ_obs + horizon]` at `step`.
    pub fn rollout_trajectory(&self, post: &PostRecord, tau_obs: f64, step: f64, horizon: f64) -> Result<ForecastSeries> {
        if !(step > 0.0) || !(horizon >= step) {
            return Err(Error::Domain(format!("need 0 < step <= horizon, got {step}, {horizon}")));
        }
        let k = (horizon / step).floor() as usize;
        let r = self.rollout(post, tau_obs, step, k, None)?;
        let observed = post.cumulative(post.window(tau_obs).len()).as_f64();
        Ok(ForecastSeries::from_increments(r.tau0, step, observed, r.increments))
    }

    /// Counts of the interval ending at `h`'s last time. The last entry of
    /// `h.counts` is the unknown target and is never read.
    pub fn predict_next(&self, post: &PostRecord, h: &History) -> Result<[f64; 4]> {
        if h.m() == 0 {
            return Err(Error::Invalid("history needs a target time".into()));
        }
        let content = self.content_vector(post, None)?;
        let s = self.stream(h, h.last_time(), None, content, |_, own| own)?;
        Ok(counts(s.outputs.last().expect("at least one row").pred))
    }

    /// Hidden state at the window end (query row 0).
    pub fn anchor_hidden(&self, post: &PostRecord, tau_obs: f64) -> Result<Vec<f64>> {
        Ok(self.rollout(post, tau_obs, self.config.tau_step, 1, None)?.anchor_hidden)
    }

    /// Predicted final engagement counts.
    pub fn predict_total(&self, post: &PostRecord, tau_obs: f64) -> Result<[f64; 4]> {
        let hidden = self.anchor_hidden(post, tau_obs)?;
        let observed = post.cumulative(post.window(tau_obs).len()).as_f64();
        let mut g = Graph::new();
        let hn = g.constant(Tensor::row_vector(hidden));
        let full = self.content_node(&mut g, &self.store, post, Some(tau_obs))?;
        let r = self.remainder_node(&mut g, &self.store, hn, full, observed)?;
        let v = g.value(r).data();
        Ok([0, 1, 2, 3].map(|c| v[c].exp_m1().max(observed[c])))
    }

    /// Opinion class probabilities.
    pub fn classify_opinion(&self, post: &PostRecord, tau_obs: f64) -> Result<Vec<f64>> {
        Ok(softmax(&self.class_logits(post, tau_obs)?))
    }

    pub fn class_logits(&self, post: &PostRecord, tau_obs: f64) -> Result<Vec<f64>> {
        self.check_window(post, tau_obs)?;
        let h = History::from_post(post, Some(tau_obs));
        let tau0 = post.t0 + tau_obs;
        let content = self.content_vector(post, None)?;
        let s = self.stream(&h, tau0, Some((tau0, self.config.tau_step, 1)), content, |_, own| own)?;
        let d = self.config.d_model;
        let data: Vec<f64> = s.outputs.iter().flat_map(|o| o.hidden.clone()).collect();
        let mut g = Graph::new();
        let hn = g.constant(Tensor::new(s.outputs.len(), d, data)?);
        let full = self.content_node(&mut g, &self.store, post, Some(tau_obs))?;
        let z = self.class_logits_node(&mut g, &self.store, hn, full);
        Ok(g.value(z).data().to_vec())
    }

    /// Cross-entropy of the true opinion, for evaluation.
    pub fn class_loss(&self, post: &PostRecord, tau_obs: f64) -> Result<f64> {
        let label = post
            .opinion
            .as_deref()
            .ok_or_else(|| Error::Invalid(format!("post {} has no opinion label", post.post_id)))?;
        let target = self.config.class_index(label)?;
        let mut g = Graph::new();
        let z = g.constant(Tensor::row_vector(self.class_logits(post, tau_obs)?));
        let l = cross_entropy_node(&mut g, z, target)?;
        Ok(g.value(l).item())
    }
}
