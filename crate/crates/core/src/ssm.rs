//! Interval-aware selective state-space machinery.
//!
//! Per step `t` with input row `x_t` (width D), input-dependent `B_t`, `C_t`
//! (width N) and effective step `dt_t`:
//!
//! ```text
//! h_t[d,n] = exp(dt_t · ã[d,n]) · h_{t−1}[d,n] + x_t[d] · B_t[n]
//! y_t[d]   = Σ_n C_t[n] · h_t[d,n]
//! ```
//!
//! with `ã = −softplus(a_raw) < 0` and `dt_t = Δ_t · gap_t / s_ref`, where `Δ_t`
//! is the (positive) selective step and `gap_t` the real time since the
//! previous row.

use crate::error::{Error, Result};
use crate::numerics::activations::{silu, softplus};
use crate::numerics::expm::{check_dt, diag_exp};
use crate::numerics::ops::{causal_conv1d_step, conv1d_node, rms_norm_node, rms_norm_row};
use crate::numerics::{CustomOp, Graph, NodeId, ParamId, ParamStore, Tensor, Unary};
use rand::Rng;
use rayon::prelude::*;
use std::collections::VecDeque;

// ---------------------------------------------------------------------------
// Interval-aware input vectors

/// History rows describe an observed interval; prediction rows a fixed-length
/// query interval anchored on the last observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntervalMode {
    History,
    Prediction,
}

/// Raw ingredients of one interval-aware row. Engagement values are already
/// in `log1p` space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalInput {
    pub back_gap: f64,
    pub eng: [f64; 4],
    pub fwd_gap: f64,
    pub e_hat: [f64; 4],
}

impl IntervalInput {
    /// History: `(t_cur − t_prev, e_cur, t_next − t_cur, ê)`.
    /// Prediction: `t_prev` is the last observation, `t_cur = τ_k`, `t_next = τ_{k+1}`.
    pub fn new(
        mode: IntervalMode,
        t_prev: f64,
        t_cur: f64,
        e_cur: [f64; 4],
        t_next: f64,
        e_hat: [f64; 4],
    ) -> Result<Self> {
        if !(t_prev <= t_cur && t_cur <= t_next) {
            return Err(Error::Invalid(format!(
                "{mode:?} interval needs t_prev <= t_cur <= t_next, got {t_prev}, {t_cur}, {t_next}"
            )));
        }
        if e_cur.iter().chain(&e_hat).any(|&v| !(v >= 0.0)) {
            return Err(Error::Domain("engagement must be >= 0".into()));
        }
        Ok(Self {
            back_gap: t_cur - t_prev,
            eng: e_cur.map(f64::ln_1p),
            fwd_gap: t_next - t_cur,
            e_hat: e_hat.map(f64::ln_1p),
        })
    }
}

/// `φ_t(Δ) = silu(w·log1p(Δ/s_ref) + b)` and `φ_e(x) = x·W + b`, each to width `d_v`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalEmbedding {
    pub gap_w: ParamId,
    pub gap_b: ParamId,
    pub eng_w: ParamId,
    pub eng_b: ParamId,
    pub d_v: usize,
}

impl IntervalEmbedding {
    pub fn new(store: &mut ParamStore, prefix: &str, d_v: usize, rng: &mut impl Rng) -> Self {
        Self {
            gap_w: store.add_uniform(format!("{prefix}.gap_w"), 1, d_v, 1.0, rng),
            gap_b: store.add_uniform(format!("{prefix}.gap_b"), 1, d_v, 0.5, rng),
            eng_w: store.add_uniform(format!("{prefix}.eng_w"), 4, d_v, 0.5, rng),
            eng_b: store.add(format!("{prefix}.eng_b"), Tensor::zeros(1, d_v)),
            d_v,
        }
    }

    pub fn width(&self) -> usize {
        4 * self.d_v
    }

    fn gap_feature(gap: f64, s_ref: f64) -> f64 {
        (gap / s_ref).ln_1p()
    }

    /// One `4·d_v` row.
    pub fn row(&self, store: &ParamStore, inp: &IntervalInput, s_ref: f64) -> Vec<f64> {
        let (gw, gb) = (store.value(self.gap_w).data(), store.value(self.gap_b).data());
        let ew = store.value(self.eng_w);
        let eb = store.value(self.eng_b).data();
        let phi_t = |gap: f64| {
            let f = Self::gap_feature(gap, s_ref);
            (0..self.d_v).map(move |k| silu(f * gw[k] + gb[k]))
        };
        let phi_e = |x: [f64; 4]| {
            (0..self.d_v).map(move |k| eb[k] + (0..4).map(|c| x[c] * ew.get(c, k)).sum::<f64>())
        };
        let mut out = Vec::with_capacity(self.width());
        out.extend(phi_t(inp.back_gap));
        out.extend(phi_e(inp.eng));
        out.extend(phi_t(inp.fwd_gap));
        out.extend(phi_e(inp.e_hat));
        out
    }

    /// `L×4d_v` rows on the tape.
    pub fn rows_node(&self, g: &mut Graph, store: &ParamStore, rows: &[IntervalInput], s_ref: f64) -> Result<NodeId> {
        let l = rows.len();
        let col = |f: &dyn Fn(&IntervalInput) -> f64| {
            Tensor::new(l, 1, rows.iter().map(f).collect()).expect("shape")
        };
        let mat = |f: &dyn Fn(&IntervalInput) -> [f64; 4]| {
            Tensor::new(l, 4, rows.iter().flat_map(f).collect()).expect("shape")
        };
        let back = col(&|r| Self::gap_feature(r.back_gap, s_ref));
        let fwd = col(&|r| Self::gap_feature(r.fwd_gap, s_ref));
        let eng = mat(&|r| r.eng);
        let hat = mat(&|r| r.e_hat);
        for t in [&back, &fwd, &eng, &hat] {
            t.ensure_finite("interval input")?;
        }
        let gw = g.param(store, self.gap_w);
        let gb = g.param(store, self.gap_b);
        let ew = g.param(store, self.eng_w);
        let eb = g.param(store, self.eng_b);
        let phi_t = |g: &mut Graph, c: Tensor| {
            let c = g.constant(c);
            let z = g.matmul(c, gw);
            let z = g.add_row(z, gb);
            g.silu(z)
        };
        let s1 = phi_t(g, back);
        let s3 = phi_t(g, fwd);
        let phi_e = |g: &mut Graph, x: Tensor| {
            let x = g.constant(x);
            let z = g.matmul(x, ew);
            g.add_row(z, eb)
        };
        let s2 = phi_e(g, eng);
        let s4 = phi_e(g, hat);
        Ok(g.concat_cols(&[s1, s2, s3, s4]))
    }
}

/// Convenience wrapper: a single interval-aware vector.
pub fn build_interval_vector(
    mode: IntervalMode,
    t_prev: f64,
    t_cur: f64,
    e_cur: [f64; 4],
    t_next: f64,
    e_hat_next: [f64; 4],
    embed: &IntervalEmbedding,
    store: &ParamStore,
    s_ref: f64,
) -> Result<Vec<f64>> {
    let inp = IntervalInput::new(mode, t_prev, t_cur, e_cur, t_next, e_hat_next)?;
    Ok(embed.row(store, &inp, s_ref))
}

// ---------------------------------------------------------------------------
// Selective projection and discretization

/// Node handles for the four projection slices; `delta` is already positive.
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub x: NodeId,
    pub delta: NodeId,
    pub b: NodeId,
    pub c: NodeId,
}

/// `[X, Δ, B, C] = [V; TE]·W + b`, with softplus applied to the Δ column.
pub fn selective_projection(
    g: &mut Graph,
    v: NodeId,
    te: NodeId,
    w: NodeId,
    bias: NodeId,
    d: usize,
    n: usize,
) -> Result<Projection> {
    let (lv, lt) = (g.value(v).rows(), g.value(te).rows());
    if lv != lt {
        return Err(Error::Shape(format!("projection inputs have {lv} and {lt} rows")));
    }
    let width = g.value(v).cols() + g.value(te).cols();
    let wv = g.value(w);
    if wv.rows() != width || wv.cols() != d + 1 + 2 * n {
        return Err(Error::Shape(format!(
            "projection weight {:?}, expected [{width}, {}]",
            wv.shape(),
            d + 1 + 2 * n
        )));
    }
    let inp = g.concat_cols(&[v, te]);
    let z = g.matmul(inp, w);
    let z = g.add_row(z, bias);
    let x = g.slice_cols(z, 0, d);
    let raw = g.slice_cols(z, d, d + 1);
    let delta = g.softplus(raw);
    let b = g.slice_cols(z, d + 1, d + 1 + n);
    let c = g.slice_cols(z, d + 1 + n, d + 1 + 2 * n);
    Ok(Projection { x, delta, b, c })
}

/// Elementwise transition factors `exp(dt·ã)`.
pub fn discretize(a_tilde: &[f64], dt: f64) -> Result<Vec<f64>> {
    check_dt(dt)?;
    Ok(diag_exp(a_tilde, dt))
}

// ---------------------------------------------------------------------------
// Scan

/// Sequential scan result: `y` is `L×D`, `h` is `L×(D·N)` with `h[t, d·N + n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanOutput {
    pub y: Tensor,
    pub h: Tensor,
}

fn check_scan(a: &Tensor, b: &Tensor, c: &Tensor, x: &Tensor, dt: &[f64]) -> Result<()> {
    let (l, d, n) = (x.rows(), x.cols(), b.cols());
    if a.shape() != [d, n] || b.rows() != l || c.shape() != [l, n] || dt.len() != l {
        return Err(Error::Shape(format!(
            "scan shapes: A {:?}, B {:?}, C {:?}, X {:?}, dt {}",
            a.shape(),
            b.shape(),
            c.shape(),
            x.shape(),
            dt.len()
        )));
    }
    for &s in dt {
        check_dt(s)?;
    }
    Ok(())
}

fn outputs(h: &Tensor, c: &Tensor, d: usize, n: usize) -> Tensor {
    let l = h.rows();
    let mut y = Tensor::zeros(l, d);
    for t in 0..l {
        let (hr, cr) = (h.row(t), c.row(t));
        for (k, yk) in y.row_mut(t).iter_mut().enumerate() {
            *yk = (0..n).map(|j| cr[j] * hr[k * n + j]).sum();
        }
    }
    y
}

/// Reference recurrence with effective steps `dt`. `a` holds `ã` (`D×N`, negative).
pub fn scan_sequential(a: &Tensor, b: &Tensor, c: &Tensor, x: &Tensor, dt: &[f64]) -> Result<ScanOutput> {
    check_scan(a, b, c, x, dt)?;
    let (l, d, n) = (x.rows(), x.cols(), b.cols());
    let mut h = Tensor::zeros(l, d * n);
    let mut state = vec![0.0; d * n];
    for t in 0..l {
        let (xr, br) = (x.row(t), b.row(t));
        for k in 0..d {
            for j in 0..n {
                let i = k * n + j;
                state[i] = (dt[t] * a.data()[i]).exp() * state[i] + xr[k] * br[j];
            }
        }
        h.row_mut(t).copy_from_slice(&state);
    }
    if !h.all_finite() {
        return Err(Error::NonFinite("scan state".into()));
    }
    Ok(ScanOutput { y: outputs(&h, c, d, n), h })
}

/// Blocked associative scan: chunks are scanned independently from a zero state
/// together with their cumulative decay, then stitched with the carried state.
pub fn scan_chunked(
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
    x: &Tensor,
    dt: &[f64],
    chunk: usize,
) -> Result<ScanOutput> {
    check_scan(a, b, c, x, dt)?;
    let (l, d, n) = (x.rows(), x.cols(), b.cols());
    let dn = d * n;
    let chunk = chunk.max(1);
    let mut h = vec![0.0; l * dn];
    let mut decay = vec![0.0; l * dn];
    h.par_chunks_mut(chunk * dn)
        .zip(decay.par_chunks_mut(chunk * dn))
        .enumerate()
        .for_each(|(ci, (hc, pc))| {
            let start = ci * chunk;
            let mut s = vec![0.0; dn];
            let mut p = vec![1.0; dn];
            for (r, t) in (start..start + hc.len() / dn).enumerate() {
                let (xr, br) = (x.row(t), b.row(t));
                for k in 0..d {
                    for j in 0..n {
                        let i = k * n + j;
                        let alpha = (dt[t] * a.data()[i]).exp();
                        s[i] = alpha * s[i] + xr[k] * br[j];
                        p[i] *= alpha;
                    }
                }
                hc[r * dn..(r + 1) * dn].copy_from_slice(&s);
                pc[r * dn..(r + 1) * dn].copy_from_slice(&p);
            }
        });
    // Carry entering each chunk.
    let n_chunks = l.div_ceil(chunk);
    let mut carries = vec![vec![0.0; dn]; n_chunks];
    for ci in 1..n_chunks {
        let last = (ci * chunk - 1) * dn;
        let prev = carries[ci - 1].clone();
        for i in 0..dn {
            carries[ci][i] = h[last + i] + decay[last + i] * prev[i];
        }
    }
    h.par_chunks_mut(chunk * dn)
        .zip(decay.par_chunks(chunk * dn))
        .enumerate()
        .for_each(|(ci, (hc, pc))| {
            let carry = &carries[ci];
            for (v, (p, cy)) in hc.iter_mut().zip(pc.iter().zip(carry.iter().cycle())) {
                *v += p * cy;
            }
        });
    let h = Tensor::new(l, dn, h)?;
    if !h.all_finite() {
        return Err(Error::NonFinite("scan state".into()));
    }
    Ok(ScanOutput { y: outputs(&h, c, d, n), h })
}

/// Scan from selective steps `delta` (positive) and real gaps: `dt = Δ·gap/s_ref`.
pub fn ssm_scan(
    a_tilde: &Tensor,
    b: &Tensor,
    c: &Tensor,
    x: &Tensor,
    delta: &[f64],
    gaps: &[f64],
    s_ref: f64,
) -> Result<ScanOutput> {
    if delta.len() != gaps.len() {
        return Err(Error::Shape("delta and gaps differ in length".into()));
    }
    if !(s_ref > 0.0) {
        return Err(Error::Config(format!("s_ref must be > 0, got {s_ref}")));
    }
    let dt: Vec<f64> = delta.iter().zip(gaps).map(|(d, g)| d * g / s_ref).collect();
    scan_sequential(a_tilde, b, c, x, &dt)
}

/// Tape node for the scan. Inputs: `X (L×D)`, `dt (L×1)`, `B (L×N)`, `C (L×N)`,
/// `ã (D×N)`. Output: `[Y | H]`, `L×(D + D·N)`.
struct ScanOp {
    d: usize,
    n: usize,
}

impl CustomOp for ScanOp {
    fn name(&self) -> &'static str {
        "ssm_scan"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (x, dt, b, c, a) = (inputs[0], inputs[1], inputs[2], inputs[3], inputs[4]);
        let (d, n) = (self.d, self.n);
        let l = x.rows();
        let dn = d * n;
        let mut gx = Tensor::zeros(l, d);
        let mut gdt = Tensor::zeros(l, 1);
        let mut gb = Tensor::zeros(l, n);
        let mut gc = Tensor::zeros(l, n);
        let mut ga = Tensor::zeros(d, n);
        let mut carry = vec![0.0; dn];
        let mut gstate = vec![0.0; dn];
        let av = a.data();
        for t in (0..l).rev() {
            let orow = output.row(t);
            let grow = grad.row(t);
            let (gy, gh) = (&grow[..d], &grow[d..]);
            let h = &orow[d..];
            let (cr, br, xr) = (c.row(t), b.row(t), x.row(t));
            let dtt = dt.data()[t];
            for k in 0..d {
                for j in 0..n {
                    let i = k * n + j;
                    gstate[i] = cr[j] * gy[k] + gh[i] + carry[i];
                    gc.data_mut()[t * n + j] += gy[k] * h[i];
                }
            }
            let mut gdt_t = 0.0;
            for k in 0..d {
                let mut acc = 0.0;
                for j in 0..n {
                    let i = k * n + j;
                    let gs = gstate[i];
                    acc += gs * br[j];
                    gb.data_mut()[t * n + j] += gs * xr[k];
                    let alpha = (dtt * av[i]).exp();
                    if t > 0 {
                        let hp = output.get(t - 1, d + i);
                        gdt_t += gs * hp * av[i] * alpha;
                        ga.data_mut()[i] += gs * hp * dtt * alpha;
                    }
                    carry[i] = gs * alpha;
                }
                gx.data_mut()[t * d + k] = acc;
            }
            gdt.data_mut()[t] = gdt_t;
        }
        vec![Some(gx), Some(gdt), Some(gb), Some(gc), Some(ga)]
    }
}

/// Scan on the tape. Returns `(Y, H)` node handles.
pub fn ssm_scan_node(
    g: &mut Graph,
    x: NodeId,
    dt: NodeId,
    b: NodeId,
    c: NodeId,
    a_tilde: NodeId,
) -> Result<(NodeId, NodeId)> {
    let dtv = g.value(dt).data().to_vec();
    let out = scan_sequential(g.value(a_tilde), g.value(b), g.value(c), g.value(x), &dtv)?;
    let (d, n) = (g.value(x).cols(), g.value(b).cols());
    let value = Tensor::concat_cols(&[&out.y, &out.h])?;
    let node = g.custom(&[x, dt, b, c, a_tilde], value, Box::new(ScanOp { d, n }));
    let y = g.slice_cols(node, 0, d);
    let h = g.slice_cols(node, d, d + d * n);
    Ok((y, h))
}

// ---------------------------------------------------------------------------
// Gated block

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub norm: ParamId,
    /// Residual projection, present when the input width differs from `D`.
    pub res_proj: Option<ParamId>,
    pub sel_w: ParamId,
    pub sel_b: ParamId,
    pub a_raw: ParamId,
    pub conv_k: ParamId,
    pub conv_b: ParamId,
    pub out_w: ParamId,
    pub d_in: usize,
    pub d_te: usize,
    pub d: usize,
    pub n: usize,
    pub w: usize,
}

impl BlockParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_te: usize,
        d: usize,
        n: usize,
        w: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan = (d_in + d_te) as f64;
        // Decay rates spread log-uniformly over [0.05, 2].
        let a_raw: Vec<f64> = (0..d * n)
            .map(|i| {
                let j = i % n;
                let frac = if n > 1 { j as f64 / (n - 1) as f64 } else { 0.5 };
                let rate = 0.05 * 40f64.powf(frac);
                crate::numerics::activations::softplus_inverse(rate)
            })
            .collect();
        Self {
            norm: store.add(format!("{prefix}.norm"), Tensor::filled(1, d_in, 1.0)),
            res_proj: (d_in != d).then(|| {
                store.add_uniform(format!("{prefix}.res_proj"), d_in, d, 1.0 / (d_in as f64).sqrt(), rng)
            }),
            sel_w: store.add_uniform(format!("{prefix}.sel_w"), d_in + d_te, d + 1 + 2 * n, 1.0 / fan.sqrt(), rng),
            sel_b: store.add(format!("{prefix}.sel_b"), Tensor::zeros(1, d + 1 + 2 * n)),
            a_raw: store.add(format!("{prefix}.a_raw"), Tensor::new(d, n, a_raw).expect("shape")),
            conv_k: store.add_uniform(format!("{prefix}.conv_k"), d, w, 1.0 / (w as f64).sqrt(), rng),
            conv_b: store.add(format!("{prefix}.conv_b"), Tensor::zeros(1, d)),
            out_w: store.add_uniform(format!("{prefix}.out_w"), d, d, 1.0 / (d as f64).sqrt(), rng),
            d_in,
            d_te,
            d,
            n,
            w,
        }
    }

    /// `ã = −softplus(a_raw)`.
    pub fn a_tilde(&self, store: &ParamStore) -> Tensor {
        store.value(self.a_raw).map(|r| -softplus(r))
    }
}

/// Node handles a block exposes besides its output.
#[derive(Clone, Copy, Debug)]
pub struct BlockTrace {
    pub out: NodeId,
    /// `L×(D·N)` hidden states.
    pub h: NodeId,
    /// `L×1` effective steps.
    pub dt: NodeId,
    /// `D×N` transition generator.
    pub a_tilde: NodeId,
}

/// `norm → selective projection → scan → Y ⊙ silu(conv(X)) → out projection → + residual`.
///
/// `gaps[t]` is the real time since row `t−1`; `dropout` is an optional `L×D`
/// mask applied to the gated signal.
#[allow(clippy::too_many_arguments)]
pub fn icmamba_block(
    g: &mut Graph,
    store: &ParamStore,
    p: &BlockParams,
    u: NodeId,
    te: NodeId,
    gaps: &[f64],
    s_ref: f64,
    dropout: Option<Tensor>,
) -> Result<BlockTrace> {
    let l = g.value(u).rows();
    if g.value(u).cols() != p.d_in || g.value(te).cols() != p.d_te {
        return Err(Error::Shape(format!(
            "block expects widths {}/{}, got {}/{}",
            p.d_in,
            p.d_te,
            g.value(u).cols(),
            g.value(te).cols()
        )));
    }
    if gaps.len() != l {
        return Err(Error::Shape(format!("{} gaps for {l} rows", gaps.len())));
    }
    if gaps.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Domain("gaps must be finite and >= 0".into()));
    }
    let scale = g.param(store, p.norm);
    let xn = rms_norm_node(g, u, scale);
    let w = g.param(store, p.sel_w);
    let bias = g.param(store, p.sel_b);
    let proj = selective_projection(g, xn, te, w, bias, p.d, p.n)?;
    let gap_col = Tensor::new(l, 1, gaps.iter().map(|x| x / s_ref).collect())?;
    let dt = g.mul_const(proj.delta, gap_col);
    let raw = g.param(store, p.a_raw);
    let sp = g.softplus(raw);
    let a = g.unary(sp, Unary::Neg);
    let (y, h) = ssm_scan_node(g, proj.x, dt, proj.b, proj.c, a)?;
    let k = g.param(store, p.conv_k);
    let kb = g.param(store, p.conv_b);
    let conv = conv1d_node(g, proj.x, k, kb)?;
    let gate = g.silu(conv);
    let mut gated = g.mul(y, gate);
    if let Some(mask) = dropout {
        gated = g.mul_const(gated, mask);
    }
    let ow = g.param(store, p.out_w);
    let o = g.matmul(gated, ow);
    let res = match p.res_proj {
        Some(r) => {
            let r = g.param(store, r);
            g.matmul(u, r)
        }
        None => u,
    };
    let out = g.add(res, o);
    Ok(BlockTrace { out, h, dt, a_tilde: a })
}

/// Recurrent state of one block: the last `W−1` projected inputs and `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockState {
    pub tail: VecDeque<Vec<f64>>,
    pub h: Vec<f64>,
}

impl BlockState {
    pub fn new(p: &BlockParams) -> Self {
        Self {
            tail: VecDeque::with_capacity(p.w),
            h: vec![0.0; p.d * p.n],
        }
    }
}

/// Cached parameter values for stepping a block without a tape.
#[derive(Clone, Debug)]
pub struct BlockWeights {
    norm: Vec<f64>,
    res_proj: Option<Tensor>,
    sel_w: Tensor,
    sel_b: Vec<f64>,
    a: Vec<f64>,
    conv_k: Tensor,
    conv_b: Tensor,
    out_w: Tensor,
    d: usize,
    n: usize,
    w: usize,
}

impl BlockWeights {
    pub fn new(store: &ParamStore, p: &BlockParams) -> Self {
        Self {
            norm: store.value(p.norm).data().to_vec(),
            res_proj: p.res_proj.map(|r| store.value(r).clone()),
            sel_w: store.value(p.sel_w).clone(),
            sel_b: store.value(p.sel_b).data().to_vec(),
            a: p.a_tilde(store).into_data(),
            conv_k: store.value(p.conv_k).clone(),
            conv_b: store.value(p.conv_b).clone(),
            out_w: store.value(p.out_w).clone(),
            d: p.d,
            n: p.n,
            w: p.w,
        }
    }

    /// Advance one row. Mirrors [`icmamba_block`] exactly.
    pub fn step(&self, state: &mut BlockState, u: &[f64], te: &[f64], gap: f64, s_ref: f64) -> Result<Vec<f64>> {
        let (d, n) = (self.d, self.n);
        let xn = rms_norm_row(u, &self.norm);
        let mut inp = xn;
        inp.extend_from_slice(te);
        let z = vec_mat(&inp, &self.sel_w, &self.sel_b);
        let x = &z[..d];
        let delta = softplus(z[d]);
        let dt = delta * (gap / s_ref);
        check_dt(dt)?;
        let (b, c) = (&z[d + 1..d + 1 + n], &z[d + 1 + n..]);
        let mut y = vec![0.0; d];
        for k in 0..d {
            let mut acc = 0.0;
            for j in 0..n {
                let i = k * n + j;
                state.h[i] = (dt * self.a[i]).exp() * state.h[i] + x[k] * b[j];
                acc += c[j] * state.h[i];
            }
            y[k] = acc;
        }
        if state.h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scan state".into()));
        }
        let hist: Vec<Vec<f64>> = state.tail.iter().cloned().collect();
        let conv = causal_conv1d_step(&hist, x, &self.conv_k, &self.conv_b);
        if self.w > 1 {
            if state.tail.len() == self.w - 1 {
                state.tail.pop_front();
            }
            state.tail.push_back(x.to_vec());
        }
        let gated: Vec<f64> = y.iter().zip(&conv).map(|(y, c)| y * silu(*c)).collect();
        let o = vec_mat(&gated, &self.out_w, &[]);
        let res = match &self.res_proj {
            Some(r) => vec_mat(u, r, &[]),
            None => u.to_vec(),
        };
        Ok(res.iter().zip(&o).map(|(a, b)| a + b).collect())
    }
}

/// Row vector times matrix plus optional bias.
pub(crate) fn vec_mat(v: &[f64], m: &Tensor, bias: &[f64]) -> Vec<f64> {
    let cols = m.cols();
    let mut out = if bias.is_empty() { vec![0.0; cols] } else { bias.to_vec() };
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(m.row(i)) {
            *o += vi * w;
        }
    }
    out
}
