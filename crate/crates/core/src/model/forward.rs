//! Differentiable forward pass and head nodes.

use super::sequence::RowPlan;
use super::Model;
use crate::data::PostRecord;
use crate::embeddings::TimePoint;
use crate::encoder::tokenize_post;
use crate::error::{Error, Result};
use crate::numerics::ops::rms_norm_node;
use crate::numerics::{CustomOp, Graph, NodeId, ParamStore, Tensor, Unary};
use crate::ssm::{icmamba_block, BlockTrace};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct TapeOutput {
    /// `L×D` final-normed hidden states.
    pub hidden: NodeId,
    /// `L×4` next-step predictions in `log1p` space.
    pub preds: NodeId,
    pub traces: Vec<BlockTrace>,
}

impl Model {
    /// `1×d_emb` content embedding. `tau_obs = None` gives the static view.
    pub fn content_node(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        post: &PostRecord,
        tau_obs: Option<f64>,
    ) -> Result<NodeId> {
        let tokens = tokenize_post(post, tau_obs, self.config.ablation, self.config.l_max)?;
        self.encoder.encode_node(g, store, &tokens)
    }

    pub fn content_vector(&self, post: &PostRecord, tau_obs: Option<f64>) -> Result<Vec<f64>> {
        let tokens = tokenize_post(post, tau_obs, self.config.ablation, self.config.l_max)?;
        self.encoder.encode(&self.store, &tokens)
    }

    /// Conditioning rows: time embedding (or its learned stand-in) plus content.
    pub fn conditioning_node(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        points: &[TimePoint],
        content: NodeId,
    ) -> Result<NodeId> {
        let l = points.len();
        let t = if self.config.ablation.without_time {
            let c = g.param(store, self.params.time_const);
            g.broadcast_rows(c, l)
        } else {
            self.params.time.rows_node(g, store, points)?
        };
        let s = g.broadcast_rows(content, l);
        Ok(g.add(t, s))
    }

    /// Run the block stack over `plan`. With `dropout = Some((p, rng))` an
    /// inverted dropout mask is applied to every block's gated signal.
    pub fn forward_tape<R: Rng>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        plan: &RowPlan,
        content: NodeId,
        mut dropout: Option<(f64, &mut R)>,
    ) -> Result<TapeOutput> {
        if plan.is_empty() {
            return Err(Error::Invalid("empty row plan".into()));
        }
        let l = plan.len();
        let cfg = &self.config;
        let te = self.conditioning_node(g, store, &plan.points, content)?;
        let mut u = self.params.interval.rows_node(g, store, &plan.inputs, cfg.s_ref)?;
        let mut traces = Vec::with_capacity(self.params.blocks.len());
        for p in &self.params.blocks {
            let mask = match dropout.as_mut() {
                Some((rate, rng)) if *rate > 0.0 => {
                    let keep = 1.0 - *rate;
                    let data = (0..l * p.d)
                        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    Some(Tensor::new(l, p.d, data)?)
                }
                _ => None,
            };
            let tr = icmamba_block(g, store, p, u, te, &plan.gaps, cfg.s_ref, mask)?;
            u = tr.out;
            traces.push(tr);
        }
        let scale = g.param(store, self.params.final_norm);
        let hidden = rms_norm_node(g, u, scale);
        let raw = self.params.next_head.node(g, store, hidden);
        let preds = g.softplus(raw);
        Ok(TapeOutput { hidden, preds, traces })
    }

    /// `1×4` predicted `log1p` final totals: `ln(observed + e^r)`, `r = relu(MLP)`.
    pub fn remainder_node(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        hidden_row: NodeId,
        content_full: NodeId,
        observed: [f64; 4],
    ) -> Result<NodeId> {
        let obs = g.constant(Tensor::row_vector(observed.map(f64::ln_1p).to_vec()));
        let inp = g.concat_cols(&[hidden_row, content_full, obs]);
        let z = self.params.remainder.node(g, store, inp);
        let r = g.unary(z, Unary::Relu);
        let e = g.exp(r);
        let o = g.constant(Tensor::row_vector(observed.to_vec()));
        let s = g.add(e, o);
        g.ln(s)
    }

    /// `1×K` opinion logits from the mean of `hidden` rows and the full content embedding.
    pub fn class_logits_node(&self, g: &mut Graph, store: &ParamStore, hidden: NodeId, content_full: NodeId) -> NodeId {
        let pooled = g.mean_rows(hidden);
        let inp = g.concat_cols(&[pooled, content_full]);
        let w = g.param(store, self.params.cls_w);
        let b = g.param(store, self.params.cls_b);
        let z = g.matmul(inp, w);
        g.add_row(z, b)
    }
}

/// `Σ_j ‖h_{j+1} − exp(dt_{j+1}·ã) ⊙ h_j‖²` for one block.
struct TemporalOp;

fn temporal_residuals(h: &Tensor, dt: &Tensor, a: &Tensor) -> Vec<f64> {
    let (l, w) = (h.rows(), h.cols());
    let mut r = Vec::with_capacity(l.saturating_sub(1) * w);
    for j in 1..l {
        let (prev, cur) = (h.row(j - 1), h.row(j));
        let s = dt.get(j, 0);
        for i in 0..w {
            r.push(cur[i] - (s * a.data()[i]).exp() * prev[i]);
        }
    }
    r
}

impl CustomOp for TemporalOp {
    fn name(&self) -> &'static str {
        "temporal_consistency"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (h, dt, a) = (inputs[0], inputs[1], inputs[2]);
        let (l, w) = (h.rows(), h.cols());
        let r = temporal_residuals(h, dt, a);
        let gs = grad.item();
        let mut gh = Tensor::zeros(l, w);
        let mut gdt = Tensor::zeros(l, 1);
        let mut ga = Tensor::zeros(a.rows(), a.cols());
        for j in 1..l {
            let s = dt.get(j, 0);
            let mut acc_dt = 0.0;
            for i in 0..w {
                let ai = a.data()[i];
                let e = (s * ai).exp();
                let two_r = 2.0 * gs * r[(j - 1) * w + i];
                let hp = h.get(j - 1, i);
                gh.row_mut(j)[i] += two_r;
                gh.row_mut(j - 1)[i] -= two_r * e;
                acc_dt -= two_r * e * ai * hp;
                ga.data_mut()[i] -= two_r * e * s * hp;
            }
            gdt.set(j, 0, acc_dt);
        }
        vec![Some(gh), Some(gdt), Some(ga)]
    }
}

/// Temporal-consistency penalty summed over blocks.
pub fn temporal_loss_node(g: &mut Graph, traces: &[BlockTrace]) -> Result<NodeId> {
    let mut total: Option<NodeId> = None;
    for tr in traces {
        let (h, dt, a) = (g.value(tr.h), g.value(tr.dt), g.value(tr.a_tilde));
        if h.cols() != a.len() || dt.rows() != h.rows() {
            return Err(Error::Shape("temporal loss inputs disagree".into()));
        }
        let v: f64 = temporal_residuals(h, dt, a).iter().map(|x| x * x).sum();
        let n = g.custom(&[tr.h, tr.dt, tr.a_tilde], Tensor::scalar(v), Box::new(TemporalOp));
        total = Some(match total {
            Some(t) => g.add(t, n),
            None => n,
        });
    }
    total.ok_or_else(|| Error::Invalid("no blocks".into()))
}

#[cfg(test)]
mod tests {
    use super::super::sequence::{build_plan, History};
    use super::super::tests::{sample_post, small_config};
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn temporal_loss_matches_direct_sum_and_zero_input_is_free() {
        let model = Model::new(small_config()).unwrap();
        let post = sample_post(3);
        let h = History::from_post(&post, None);
        let plan = build_plan(&h, h.last_time(), &h.truth_hats(), None).unwrap();
        let mut g = Graph::new();
        let se = model.content_node(&mut g, &model.store, &post, None).unwrap();
        let out = model.forward_tape::<ChaCha8Rng>(&mut g, &model.store, &plan, se, None).unwrap();
        let lt = temporal_loss_node(&mut g, &out.traces).unwrap();
        let mut want = 0.0;
        for tr in &out.traces {
            let (hv, dt, a) = (g.value(tr.h), g.value(tr.dt), g.value(tr.a_tilde));
            for j in 1..hv.rows() {
                for i in 0..hv.cols() {
                    let r = hv.get(j, i) - (dt.get(j, 0) * a.data()[i]).exp() * hv.get(j - 1, i);
                    want += r * r;
                }
            }
        }
        assert!((g.value(lt).item() - want).abs() < 1e-12 * want.max(1.0));
    }

    #[test]
    fn full_model_gradients() {
        let cfg = small_config();
        let model = Model::new(cfg).unwrap();
        let post = sample_post(4);
        let h = History::from_post(&post, Some(3.0 * 3600.0));
        let hats = vec![[0.3, 0.0, 0.1, 0.2]; 3];
        let tau0 = post.t0 + 3.0 * 3600.0;
        let plan = build_plan(&h, tau0, &h.truth_hats(), Some((tau0, 300.0, &hats))).unwrap();
        let target = Tensor::filled(plan.len(), 4, 0.7);
        let r = grad_check(&model.store, 1e-6, Some(6), |g, s| {
            let se = model.content_node(g, s, &post, None)?;
            let out = model.forward_tape::<ChaCha8Rng>(g, s, &plan, se, None)?;
            let t = g.constant(target.clone());
            let d = g.sub(out.preds, t);
            let sq = g.square(d);
            let lp = g.sum(sq);
            let lt = temporal_loss_node(g, &out.traces)?;
            let lt = g.scale(lt, 0.1);
            let full = model.content_node(g, s, &post, Some(3.0 * 3600.0))?;
            let last = g.slice_rows(out.hidden, plan.n_history, plan.n_history + 1);
            let rem = model.remainder_node(g, s, last, full, h.cumulative())?;
            let rs = g.sum(rem);
            let logits = model.class_logits_node(g, s, out.hidden, full);
            let ce = crate::numerics::ops::cross_entropy_node(g, logits, 1)?;
            let a = g.add(lp, lt);
            let b = g.add(rs, ce);
            Ok(g.add(a, b))
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
        assert!(r.entries_checked > 100);
    }

    #[test]
    fn dropout_masks_change_output_only_in_training() {
        let model = Model::new(small_config()).unwrap();
        let post = sample_post(5);
        let h = History::from_post(&post, None);
        let plan = build_plan(&h, h.last_time(), &h.truth_hats(), None).unwrap();
        let run = |rate: f64| {
            let mut g = Graph::new();
            let se = model.content_node(&mut g, &model.store, &post, None).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let out = model
                .forward_tape(&mut g, &model.store, &plan, se, Some((rate, &mut rng)))
                .unwrap();
            g.value(out.preds).clone()
        };
        assert_eq!(run(0.0), run(0.0));
        assert_ne!(run(0.0), run(0.5));
    }
}
