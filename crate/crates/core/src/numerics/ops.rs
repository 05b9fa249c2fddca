//! Fused differentiable operations with hand-written gradients.

use super::tape::{CustomOp, Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const RMS_EPS: f64 = 1e-6;

/// Widest convolution kernel accepted.
pub const MAX_CONV_WIDTH: usize = 16;

/// Depthwise causal convolution: `out[t,c] = bias[c] + Σ_{w<W} kernel[c,w]·x[t−w,c]`,
/// with `x[<0] = 0`. `kernel` is `D×W`, `bias` is `1×D`.
pub fn causal_conv1d(x: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (l, d, w) = (x.rows(), x.cols(), kernel.cols());
    if kernel.rows() != d {
        return Err(Error::Shape(format!(
            "conv kernel has {} channels, input has {d}",
            kernel.rows()
        )));
    }
    if w == 0 {
        return Err(Error::Shape("conv kernel width must be at least 1".into()));
    }
    if w > MAX_CONV_WIDTH {
        return Err(Error::Config(format!(
            "conv kernel width {w} exceeds maximum {MAX_CONV_WIDTH}"
        )));
    }
    if let Some(b) = bias {
        if b.cols() != d || b.rows() != 1 {
            return Err(Error::Shape("conv bias must be 1xD".into()));
        }
    }
    let mut out = Tensor::zeros(l, d);
    for t in 0..l {
        for c in 0..d {
            let mut acc = bias.map_or(0.0, |b| b.data()[c]);
            for lag in 0..w.min(t + 1) {
                acc += kernel.get(c, lag) * x.get(t - lag, c);
            }
            out.set(t, c, acc);
        }
    }
    Ok(out)
}

/// Convolution over a carried tail: `history` holds the previous `W−1` input rows
/// (oldest first, zero-padded), `x_row` the current one.
pub fn causal_conv1d_step(history: &[Vec<f64>], x_row: &[f64], kernel: &Tensor, bias: &Tensor) -> Vec<f64> {
    let w = kernel.cols();
    let d = x_row.len();
    let mut out = bias.data().to_vec();
    for c in 0..d {
        out[c] += kernel.get(c, 0) * x_row[c];
        for lag in 1..w {
            let idx = history.len() as isize - lag as isize;
            if idx >= 0 {
                out[c] += kernel.get(c, lag) * history[idx as usize][c];
            }
        }
    }
    out
}

struct Conv1dOp;

impl CustomOp for Conv1dOp {
    fn name(&self) -> &'static str {
        "causal_conv1d"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let (x, k) = (inputs[0], inputs[1]);
        let (l, d, w) = (x.rows(), x.cols(), k.cols());
        let mut gx = Tensor::zeros(l, d);
        let mut gk = Tensor::zeros(d, w);
        let mut gb = Tensor::zeros(1, d);
        for t in 0..l {
            for c in 0..d {
                let gtc = g.get(t, c);
                gb.data_mut()[c] += gtc;
                for lag in 0..w.min(t + 1) {
                    gx.data_mut()[(t - lag) * d + c] += gtc * k.get(c, lag);
                    gk.data_mut()[c * w + lag] += gtc * x.get(t - lag, c);
                }
            }
        }
        vec![Some(gx), Some(gk), Some(gb)]
    }
}

pub fn conv1d_node(g: &mut Graph, x: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
    let out = causal_conv1d(g.value(x), g.value(kernel), Some(g.value(bias)))?;
    Ok(g.custom(&[x, kernel, bias], out, Box::new(Conv1dOp)))
}

/// Row-wise RMS normalisation: `y = x / sqrt(mean(x²) + ε) ⊙ scale`.
pub fn rms_norm(x: &Tensor, scale: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let inv = 1.0 / rms(row);
        for (v, s) in row.iter_mut().zip(scale.data()) {
            *v *= inv * s;
        }
    }
    out
}

#[inline]
fn rms(row: &[f64]) -> f64 {
    (row.iter().map(|v| v * v).sum::<f64>() / row.len().max(1) as f64 + RMS_EPS).sqrt()
}

pub fn rms_norm_row(row: &[f64], scale: &[f64]) -> Vec<f64> {
    let inv = 1.0 / rms(row);
    row.iter().zip(scale).map(|(v, s)| v * inv * s).collect()
}

struct RmsNormOp;

impl CustomOp for RmsNormOp {
    fn name(&self) -> &'static str {
        "rms_norm"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let (x, s) = (inputs[0], inputs[1]);
        let n = x.cols() as f64;
        let mut gx = Tensor::zeros(x.rows(), x.cols());
        let mut gs = Tensor::zeros(1, x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let inv = 1.0 / rms(row);
            let grow = g.row(r);
            let mut dot = 0.0;
            for c in 0..row.len() {
                let xhat = row[c] * inv;
                let gxhat = grow[c] * s.data()[c];
                dot += gxhat * xhat;
                gs.data_mut()[c] += grow[c] * xhat;
            }
            let out = gx.row_mut(r);
            for c in 0..row.len() {
                let xhat = row[c] * inv;
                let gxhat = grow[c] * s.data()[c];
                out[c] = (gxhat - xhat * dot / n) * inv;
            }
        }
        vec![Some(gx), Some(gs)]
    }
}

pub fn rms_norm_node(g: &mut Graph, x: NodeId, scale: NodeId) -> NodeId {
    let out = rms_norm(g.value(x), g.value(scale));
    g.custom(&[x, scale], out, Box::new(RmsNormOp))
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

struct CrossEntropyOp {
    target: usize,
}

impl CustomOp for CrossEntropyOp {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let mut p = softmax(inputs[0].data());
        p[self.target] -= 1.0;
        let scale = g.item();
        let d = Tensor::new(1, p.len(), p.into_iter().map(|v| v * scale).collect()).expect("shape");
        vec![Some(d)]
    }
}

/// `−log softmax(logits)[target]` for a `1×K` logits row.
pub fn cross_entropy_node(g: &mut Graph, logits: NodeId, target: usize) -> Result<NodeId> {
    let z = g.value(logits);
    if z.rows() != 1 || target >= z.cols() {
        return Err(Error::Shape(format!(
            "cross entropy target {target} with logits {:?}",
            z.shape()
        )));
    }
    let loss = -log_softmax(z.data())[target];
    Ok(g.custom(&[logits], Tensor::scalar(loss), Box::new(CrossEntropyOp { target })))
}
