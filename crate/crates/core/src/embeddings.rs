//! Time-aware positional embeddings.
//!
//! * `rte(t, t_ref) = sin((t − t_ref)/σ)`, a single scalar with a learnable scale σ.
//! * `ate(t)` interleaves `sin(t/base^{2i/d})`, `cos(t/base^{2i/d})`.
//! * `pe = [rte; ate] · W_p` fuses both into `d_emb` features.
//! * `epe = pe · (1 + ln(1 + E))` modulates by the total engagement `E`.
//!
//! Relative offsets are in seconds. The absolute encoding is evaluated on days
//! since the epoch so that its sinusoids resolve the dataset's time scale.

use crate::data::PostRecord;
use crate::error::{Error, Result};
use crate::numerics::activations::{softplus, softplus_inverse};
use crate::numerics::{Graph, NodeId, ParamId, ParamStore, Tensor, Unary};
use rand::Rng;

pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const DEFAULT_ATE_BASE: f64 = 10_000.0;

pub fn rte(t: f64, t_ref: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("RTE scale must be > 0, got {sigma}")));
    }
    if !t.is_finite() || !t_ref.is_finite() {
        return Err(Error::NonFinite("RTE time".into()));
    }
    Ok(((t - t_ref) / sigma).sin())
}

/// Interleaved sinusoidal encoding of width `d_emb` (which must be even).
pub fn ate(t: f64, d_emb: usize, base: f64) -> Result<Vec<f64>> {
    if d_emb % 2 != 0 {
        return Err(Error::Config(format!("embedding width must be even, got {d_emb}")));
    }
    if !(base > 1.0) {
        return Err(Error::Config(format!("ATE base must be > 1, got {base}")));
    }
    if !t.is_finite() {
        return Err(Error::NonFinite("ATE time".into()));
    }
    let mut out = Vec::with_capacity(d_emb);
    for i in 0..d_emb / 2 {
        let freq = base.powf(-((2 * i) as f64) / d_emb as f64);
        out.push((t * freq).sin());
        out.push((t * freq).cos());
    }
    Ok(out)
}

/// `1 + ln(1 + E)`.
pub fn modulation(e_total: f64) -> Result<f64> {
    if !(e_total >= 0.0) {
        return Err(Error::Domain(format!("negative engagement {e_total}")));
    }
    Ok(1.0 + e_total.ln_1p())
}

/// Learnable part of the time embedding: σ (stored through softplus) and `W_p`.
///
/// `W_p` is stored as a `(1+d_emb)×d_emb` matrix applied on the right of the
/// row vector `[rte; ate]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeEmbedding {
    pub sigma_raw: ParamId,
    pub w_p: ParamId,
    pub d_emb: usize,
    pub ate_base: f64,
}

/// One embedding row request: event time, reference time, total engagement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimePoint {
    pub t: f64,
    pub t_ref: f64,
    pub e_total: f64,
}

impl TimeEmbedding {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_emb: usize,
        sigma_init: f64,
        ate_base: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        ate(0.0, d_emb, ate_base)?;
        if !(sigma_init > 0.0) {
            return Err(Error::Config(format!("sigma init must be > 0, got {sigma_init}")));
        }
        let sigma_raw = store.add(
            format!("{prefix}.sigma_raw"),
            Tensor::scalar(softplus_inverse(sigma_init)),
        );
        let scale = 1.0 / ((1 + d_emb) as f64).sqrt();
        let w_p = store.add_uniform(format!("{prefix}.w_p"), 1 + d_emb, d_emb, scale, rng);
        Ok(Self {
            sigma_raw,
            w_p,
            d_emb,
            ate_base,
        })
    }

    pub fn sigma(&self, store: &ParamStore) -> f64 {
        softplus(store.value(self.sigma_raw).item())
    }

    fn features(&self, store: &ParamStore, t: f64, t_ref: f64) -> Result<Vec<f64>> {
        let mut f = Vec::with_capacity(1 + self.d_emb);
        f.push(rte(t, t_ref, self.sigma(store))?);
        f.extend(ate(t / SECONDS_PER_DAY, self.d_emb, self.ate_base)?);
        Ok(f)
    }

    pub fn pe(&self, store: &ParamStore, t: f64, t_ref: f64) -> Result<Vec<f64>> {
        let f = Tensor::row_vector(self.features(store, t, t_ref)?);
        Ok(f.matmul(store.value(self.w_p)).into_data())
    }

    pub fn epe(&self, store: &ParamStore, t: f64, t_ref: f64, e_total: f64) -> Result<Vec<f64>> {
        let m = modulation(e_total)?;
        Ok(self.pe(store, t, t_ref)?.into_iter().map(|v| v * m).collect())
    }

    /// `L×d_emb` EPE rows on the tape, differentiable in σ and `W_p`.
    pub fn rows_node(&self, g: &mut Graph, store: &ParamStore, points: &[TimePoint]) -> Result<NodeId> {
        let l = points.len();
        let mut diffs = Vec::with_capacity(l);
        let mut ates = Vec::with_capacity(l * self.d_emb);
        let mut mods = Vec::with_capacity(l * self.d_emb);
        for p in points {
            if !p.t.is_finite() || !p.t_ref.is_finite() {
                return Err(Error::NonFinite("time embedding input".into()));
            }
            diffs.push(p.t - p.t_ref);
            ates.extend(ate(p.t / SECONDS_PER_DAY, self.d_emb, self.ate_base)?);
            let m = modulation(p.e_total)?;
            mods.extend(std::iter::repeat(m).take(self.d_emb));
        }
        let raw = g.param(store, self.sigma_raw);
        let sigma = g.softplus(raw);
        let inv = g.unary(sigma, Unary::Recip);
        let d = g.constant(Tensor::new(l, 1, diffs)?);
        let arg = g.mul_scalar(d, inv);
        let r = g.sin(arg);
        let a = g.constant(Tensor::new(l, self.d_emb, ates)?);
        let f = g.concat_cols(&[r, a]);
        let w = g.param(store, self.w_p);
        let pe = g.matmul(f, w);
        Ok(g.mul_const(pe, Tensor::new(l, self.d_emb, mods)?))
    }
}

/// Rows of the per-post time embedding sequence for one reference time.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeEmbeddingSequence {
    pub rows: Tensor,
    pub times: Vec<f64>,
}

/// One EPE row (reference `tau_k`) per in-window observation, then `PE(τ_k, τ_k, 0)`.
pub fn build_time_sequence(
    post: &PostRecord,
    tau_k: f64,
    tau_obs: f64,
    te: &TimeEmbedding,
    store: &ParamStore,
) -> Result<TimeEmbeddingSequence> {
    if tau_k < post.t0 + tau_obs {
        return Err(Error::Invalid(format!(
            "reference time {tau_k} precedes the window end {}",
            post.t0 + tau_obs
        )));
    }
    if post.observations.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(Error::Invalid(format!("post {}: unordered history", post.post_id)));
    }
    let window = post.window(tau_obs);
    let mut data = Vec::with_capacity((window.len() + 1) * te.d_emb);
    let mut times = Vec::with_capacity(window.len() + 1);
    for o in window {
        data.extend(te.epe(store, o.t, tau_k, o.e.total() as f64)?);
        times.push(o.t);
    }
    data.extend(te.pe(store, tau_k, tau_k)?);
    times.push(tau_k);
    Ok(TimeEmbeddingSequence {
        rows: Tensor::new(times.len(), te.d_emb, data)?,
        times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn setup(d: usize) -> (ParamStore, TimeEmbedding) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let te = TimeEmbedding::new(&mut store, "time", d, 10_000.0, DEFAULT_ATE_BASE, &mut rng).unwrap();
        (store, te)
    }

    #[test]
    fn rte_reference_values() {
        assert_eq!(rte(5.0, 5.0, 3.0).unwrap(), 0.0);
        assert!((rte(10.0 + PI * 7.0 / 2.0, 10.0, 7.0).unwrap() - 1.0).abs() < 1e-15);
        let a = rte(3.0, 1.0, 2.0).unwrap();
        let b = rte(3.0 + 2.0 * PI * 2.0, 1.0, 2.0).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(rte(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn ate_reference_values() {
        assert_eq!(ate(0.0, 6, 10_000.0).unwrap(), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let v = ate(PI / 2.0, 4, 10_000.0).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15 && v[1].abs() < 1e-15);
        assert!(ate(1.0, 5, 10_000.0).is_err());
    }

    #[test]
    fn crafted_projection_selects_rte() {
        let (mut store, te) = setup(4);
        let mut w = Tensor::zeros(5, 4);
        w.set(0, 0, 1.0);
        *store.value_mut(te.w_p) = w;
        let pe = te.pe(&store, 9_000.0, 1_000.0).unwrap();
        let want = rte(9_000.0, 1_000.0, te.sigma(&store)).unwrap();
        assert!((pe[0] - want).abs() < 1e-15);
        assert_eq!(&pe[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn epe_multiplier() {
        let (store, te) = setup(4);
        let pe = te.pe(&store, 500.0, 0.0).unwrap();
        assert_eq!(te.epe(&store, 500.0, 0.0, 0.0).unwrap(), pe);
        let two = te.epe(&store, 500.0, 0.0, std::f64::consts::E - 1.0).unwrap();
        for (a, b) in two.iter().zip(&pe) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
        assert!(te.epe(&store, 0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn rows_node_matches_scalar_path() {
        let (store, te) = setup(6);
        let pts = [
            TimePoint { t: 1.7e9, t_ref: 1.7e9 + 3600.0, e_total: 12.0 },
            TimePoint { t: 1.7e9 + 60.0, t_ref: 1.7e9 + 3600.0, e_total: 0.0 },
        ];
        let mut g = Graph::new();
        let n = te.rows_node(&mut g, &store, &pts).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let want = te.epe(&store, p.t, p.t_ref, p.e_total).unwrap();
            for (a, b) in g.value(n).row(i).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (store, te) = setup(4);
        let pts = [
            TimePoint { t: 1.0e9, t_ref: 1.0e9 + 7200.0, e_total: 3.0 },
            TimePoint { t: 1.0e9 + 900.0, t_ref: 1.0e9 + 7200.0, e_total: 40.0 },
        ];
        let r = grad_check(&store, 1e-5, None, |g, s| {
            let n = te.rows_node(g, s, &pts)?;
            let sq = g.square(n);
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }
}
