//! Per-post objectives. Each evaluation builds one tape for one post and
//! returns its losses and, when training, its parameter gradients.

use super::config::TrainConfig;
use super::report::LossSummary;
use crate::data::PostRecord;
use crate::error::{Error, Result};
use crate::model::forward::temporal_loss_node;
use crate::model::sequence::{build_plan, interpolate_cumulative, History};
use crate::model::Model;
use crate::numerics::ops::cross_entropy_node;
use crate::numerics::{GradBuffer, Graph, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Training task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Forecast,
    Classify,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Objective {
    Pretrain,
    Finetune(Task),
}

impl Objective {
    /// Parameters the objective never touches; frozen so weight decay leaves them alone.
    pub(crate) fn unused(self, name: &str) -> bool {
        let unused: &[&str] = match self {
            Objective::Pretrain => &["rem.", "cls.", "t2."],
            Objective::Finetune(Task::Forecast) => &["cls.", "t2."],
            Objective::Finetune(Task::Classify) => &["head.", "rem.", "t2."],
        };
        unused.iter().any(|p| name.starts_with(p))
    }
}

/// Randomness and schedule for one post in one pass.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PassContext {
    pub seed: u64,
    pub epoch: u64,
    pub teacher_forcing: f64,
    pub train: bool,
}

/// Validation draws reuse this epoch key so every epoch sees the same windows.
pub(crate) const VALIDATION_EPOCH: u64 = u64::MAX;

pub(crate) fn post_rng(seed: u64, epoch: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index as u64 + 1);
    rng
}

/// Observation window for finetuning: a fixed checkpoint half of the time,
/// log-uniform otherwise, kept inside the observed span.
pub(crate) fn sample_window(post: &PostRecord, cfg: &TrainConfig, rng: &mut impl Rng) -> f64 {
    let tau = if !cfg.window_choices.is_empty() && rng.gen_bool(0.5) {
        cfg.window_choices[rng.gen_range(0..cfg.window_choices.len())]
    } else {
        let (a, b) = (cfg.window_min.ln(), cfg.window_max.ln());
        (a + (b - a) * rng.gen::<f64>()).exp()
    };
    let span = post.last_time() - post.t0;
    tau.min(0.9 * span).max(0.0)
}

pub(crate) struct PostResult {
    pub losses: LossSummary,
    pub grads: Option<GradBuffer>,
}

fn sq_error_sum(g: &mut Graph, preds: NodeId, targets: &[[f64; 4]]) -> Result<NodeId> {
    let t = g.constant(Tensor::new(targets.len(), 4, targets.concat())?);
    let d = g.sub(preds, t);
    let s = g.square(d);
    Ok(g.sum(s))
}

fn log_diff(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [0, 1, 2, 3].map(|c| (a[c] - b[c]).max(0.0).ln_1p())
}

/// Teacher-forcing values for query rows `0..=k_count`: entry `k` is the truth
/// of what row `k − 1` predicts.
fn query_truth(full: &History, h: &History, tau0: f64, step: f64, k_count: usize) -> Vec<[f64; 4]> {
    let m = h.m();
    let mut out = Vec::with_capacity(k_count + 1);
    out.push(h.counts[m].map(f64::ln_1p));
    let mut prev = h.cumulative();
    for k in 1..=k_count {
        let c = interpolate_cumulative(full, tau0 + k as f64 * step);
        out.push(log_diff(c, prev));
        prev = c;
    }
    out
}

impl Model {
    pub(crate) fn evaluate_post(
        &self,
        objective: Objective,
        cfg: &TrainConfig,
        post: &PostRecord,
        index: usize,
        ctx: PassContext,
    ) -> Result<PostResult> {
        let mut rng = post_rng(ctx.seed, ctx.epoch, index);
        let p_tf = if ctx.train { ctx.teacher_forcing } else { 1.0 };
        let mut g = Graph::new();
        let store = &self.store;
        let (lp, lt, task): (NodeId, NodeId, Option<NodeId>) = match objective {
            Objective::Pretrain => {
                let h = History::from_post(post, None);
                if h.m() == 0 {
                    return Err(Error::Invalid(format!("post {} has no intervals", post.post_id)));
                }
                let t_ref = h.last_time();
                let truth = h.truth_hats();
                let hats = if p_tf >= 1.0 {
                    truth
                } else {
                    let content = self.content_vector(post, None)?;
                    self.stream(&h, t_ref, None, content, |row, own| {
                        if rng.gen::<f64>() < p_tf { truth[row] } else { own }
                    })?
                    .hats
                };
                let plan = build_plan(&h, t_ref, &hats, None)?;
                let se = self.content_node(&mut g, store, post, None)?;
                let dropout = ctx.train.then_some((cfg.dropout, &mut rng));
                let out = self.forward_tape(&mut g, store, &plan, se, dropout)?;
                let lp = sq_error_sum(&mut g, out.preds, &h.targets())?;
                let lt = temporal_loss_node(&mut g, &out.traces)?;
                (lp, lt, None)
            }
            Objective::Finetune(Task::Forecast) => {
                let tau = sample_window(post, cfg, &mut rng);
                let full = History::from_post(post, None);
                let h = History::from_post(post, Some(tau));
                let m = h.m();
                let tau0 = post.t0 + tau;
                let step = cfg.rollout_step;
                let end = (tau0 + cfg.rollout_horizon)
                    .min(post.t0 + self.config.post_lifetime)
                    .min(full.last_time());
                let k_count = (((end - tau0) / step).ceil() as usize).max(1);
                let mut truth = h.truth_hats();
                truth.extend(query_truth(&full, &h, tau0, step, k_count));
                let hats = if p_tf >= 1.0 {
                    truth[..m + k_count].to_vec()
                } else {
                    let content = self.content_vector(post, None)?;
                    self.stream(&h, tau0, Some((tau0, step, k_count)), content, |row, own| {
                        if rng.gen::<f64>() < p_tf { truth[row] } else { own }
                    })?
                    .hats
                };
                let plan = build_plan(&h, tau0, &hats[..m], Some((tau0, step, &hats[m..])))?;
                let se = self.content_node(&mut g, store, post, None)?;
                let dropout = ctx.train.then_some((cfg.dropout, &mut rng));
                let out = self.forward_tape(&mut g, store, &plan, se, dropout)?;
                let mut targets = h.targets();
                targets.extend_from_slice(&truth[m + 1..]);
                let lp = sq_error_sum(&mut g, out.preds, &targets)?;
                let lt = temporal_loss_node(&mut g, &out.traces)?;
                let full_se = self.content_node(&mut g, store, post, Some(tau))?;
                let anchor = g.slice_rows(out.hidden, m, m + 1);
                let rem = self.remainder_node(&mut g, store, anchor, full_se, h.cumulative())?;
                let total = full.cumulative().map(f64::ln_1p);
                let task = sq_error_sum(&mut g, rem, &[total])?;
                (lp, lt, Some(task))
            }
            Objective::Finetune(Task::Classify) => {
                let label = post
                    .opinion
                    .as_deref()
                    .ok_or_else(|| Error::Invalid(format!("post {} has no opinion label", post.post_id)))?;
                let target = self.config.class_index(label)?;
                let tau = sample_window(post, cfg, &mut rng);
                let h = History::from_post(post, Some(tau));
                let m = h.m();
                let tau0 = post.t0 + tau;
                let step = self.config.tau_step;
                let content = self.content_vector(post, None)?;
                let hats = self.stream(&h, tau0, Some((tau0, step, 1)), content, |_, own| own)?.hats;
                let plan = build_plan(&h, tau0, &hats[..m], Some((tau0, step, &hats[m..])))?;
                let se = self.content_node(&mut g, store, post, None)?;
                let dropout = ctx.train.then_some((cfg.dropout, &mut rng));
                let out = self.forward_tape(&mut g, store, &plan, se, dropout)?;
                let full_se = self.content_node(&mut g, store, post, Some(tau))?;
                let logits = self.class_logits_node(&mut g, store, out.hidden, full_se);
                let ce = cross_entropy_node(&mut g, logits, target)?;
                let zero = g.constant(Tensor::scalar(0.0));
                (zero, zero, Some(ce))
            }
        };
        let weighted = g.scale(lt, cfg.lambda);
        let total = g.add(lp, weighted);
        let root = match task {
            Some(t) => g.add(total, t),
            None => total,
        };
        let losses = LossSummary {
            pred: g.value(lp).item(),
            temp: g.value(lt).item(),
            total: g.value(total).item(),
            task: task.map_or(0.0, |t| g.value(t).item()),
        };
        if !losses.objective().is_finite() {
            return Err(Error::NonFinite(format!(
                "post {}: loss pred {} temp {} task {}",
                post.post_id, losses.pred, losses.temp, losses.task
            )));
        }
        let grads = if ctx.train { Some(g.backward(root, store)?) } else { None };
        Ok(PostResult { losses, grads })
    }
}
