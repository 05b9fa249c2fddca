//! Reverse-mode differentiation over a tape of tensor operations.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its value. [`Graph::backward`] walks the nodes in reverse and returns the
//! gradient of a scalar root with respect to every parameter that took part.
//!
//! ```
//! use icssm::numerics::{Graph, ParamStore, Tensor};
//!
//! let mut store = ParamStore::new();
//! let x = store.add("x", Tensor::scalar(3.0));
//! let mut g = Graph::new();
//! let xn = g.param(&store, x);
//! let y = g.mul(xn, xn);
//! let grads = g.backward(y, &store).unwrap();
//! assert_eq!(g.value(y).item(), 9.0);
//! assert_eq!(grads.get(x).item(), 6.0);
//! ```
//!
//! Operations with hand-written gradients (scan, convolution, normalisation)
//! plug in through [`CustomOp`].

use super::activations::{sigmoid, silu, silu_grad, softplus};
use super::param::{GradBuffer, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Silu,
    Softplus,
    Sigmoid,
    Exp,
    Log1p,
    Ln,
    Sin,
    Cos,
    Tanh,
    Neg,
    Square,
    Recip,
    Relu,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Silu => silu(x),
            Unary::Softplus => softplus(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Exp => x.exp(),
            Unary::Log1p => x.ln_1p(),
            Unary::Ln => x.ln(),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Tanh => x.tanh(),
            Unary::Neg => -x,
            Unary::Square => x * x,
            Unary::Recip => 1.0 / x,
            Unary::Relu => x.max(0.0),
        }
    }

    /// Derivative given the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Silu => silu_grad(x),
            Unary::Softplus => sigmoid(x),
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Exp => y,
            Unary::Log1p => 1.0 / (1.0 + x),
            Unary::Ln => 1.0 / x,
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Tanh => 1.0 - y * y,
            Unary::Neg => -1.0,
            Unary::Square => 2.0 * x,
            Unary::Recip => -y * y,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// An operation whose forward value is computed by the caller and whose
/// vector-Jacobian product is supplied here.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients for each input, given the upstream gradient of the output.
    /// `None` means the input receives no gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Constant,
    Param,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    MulConst(NodeId, Tensor),
    MulScalar(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Unary(NodeId, Unary),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    BroadcastRows(NodeId),
    Sum(NodeId),
    MeanRows(NodeId),
    Gather(NodeId, Vec<usize>),
    Custom(Vec<NodeId>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// One forward pass worth of recorded operations.
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: Vec<(ParamId, NodeId)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    /// Bind a parameter. Repeated calls for the same id return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&(_, n)) = self.param_nodes.iter().find(|(p, _)| *p == id) {
            return n;
        }
        let n = self.push(store.value(id).clone(), Op::Param, true);
        self.param_nodes.push((id, n));
        n
    }

    /// Bind a parameter as a constant: its value participates, its gradient is dropped.
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.constant(store.value(id).clone())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.cols(),
            vb.rows(),
            "matmul {:?} x {:?}",
            va.shape(),
            vb.shape()
        );
        let v = va.matmul(vb);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Add(a, b), ng)
    }

    /// `a (L×n) + b (1×n)` with `b` broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(vb.rows(), 1);
        assert_eq!(va.cols(), vb.cols(), "add_row width");
        let mut v = va.clone();
        for r in 0..v.rows() {
            for (x, y) in v.row_mut(r).iter_mut().zip(vb.data()) {
                *x += y;
            }
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::AddRow(a, b), ng)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert!(self.value(a).same_shape(self.value(b)), "mul shapes");
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    /// `a (L×n) ⊙ b (1×n)` with `b` broadcast over rows.
    pub fn mul_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(vb.rows(), 1);
        assert_eq!(va.cols(), vb.cols(), "mul_row width");
        let mut v = va.clone();
        for r in 0..v.rows() {
            for (x, y) in v.row_mut(r).iter_mut().zip(vb.data()) {
                *x *= y;
            }
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::MulRow(a, b), ng)
    }

    /// Elementwise product with a constant of the same shape (masks, fixed multipliers).
    pub fn mul_const(&mut self, a: NodeId, c: Tensor) -> NodeId {
        assert!(self.value(a).same_shape(&c), "mul_const shapes");
        let v = self.value(a).zip_map(&c, |x, y| x * y);
        let ng = self.needs(a);
        self.push(v, Op::MulConst(a, c), ng)
    }

    /// `a · s` for a `1×1` node `s`.
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.value(s).len(), 1, "mul_scalar needs a 1x1 scalar");
        let k = self.value(s).item();
        let v = self.value(a).scale(k);
        let ng = self.needs(a) || self.needs(s);
        self.push(v, Op::MulScalar(a, s), ng)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).scale(k);
        let ng = self.needs(a);
        self.push(v, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| x + k);
        let ng = self.needs(a);
        self.push(v, Op::AddScalar(a), ng)
    }

    pub fn unary(&mut self, a: NodeId, f: Unary) -> NodeId {
        let v = self.value(a).map(|x| f.apply(x));
        let ng = self.needs(a);
        self.push(v, Op::Unary(a, f), ng)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Silu)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Softplus)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Exp)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Sin)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Cos)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Square)
    }

    /// `ln(1 + x)`, rejecting inputs at or below −1.
    pub fn log1p(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(x) = self.value(a).data().iter().find(|&&x| x <= -1.0) {
            return Err(Error::Domain(format!("log1p undefined at {x}")));
        }
        Ok(self.unary(a, Unary::Log1p))
    }

    /// Natural log, rejecting non-positive inputs.
    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(x) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain(format!("ln undefined at {x}")));
        }
        Ok(self.unary(a, Unary::Ln))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let v = self.value(a).slice_cols(start, end);
        let ng = self.needs(a);
        self.push(v, Op::SliceCols(a, start), ng)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let v = self.value(a).slice_rows(start, end);
        let ng = self.needs(a);
        self.push(v, Op::SliceRows(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_cols(&vals).expect("concat_cols rows");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_rows(&vals).expect("concat_rows cols");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(v, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Repeat a `1×n` row `rows` times.
    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> NodeId {
        let va = self.value(a);
        assert_eq!(va.rows(), 1);
        let mut data = Vec::with_capacity(rows * va.cols());
        for _ in 0..rows {
            data.extend_from_slice(va.data());
        }
        let v = Tensor::new(rows, va.cols(), data).expect("shape");
        let ng = self.needs(a);
        self.push(v, Op::BroadcastRows(a), ng)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(v, Op::Sum(a), ng)
    }

    /// Column means: `L×n → 1×n`.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let l = va.rows().max(1) as f64;
        let mut out = vec![0.0; va.cols()];
        for r in 0..va.rows() {
            for (o, x) in out.iter_mut().zip(va.row(r)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= l);
        let ng = self.needs(a);
        self.push(Tensor::row_vector(out), Op::MeanRows(a), ng)
    }

    /// Row lookup into an embedding table.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let vt = self.value(table);
        let w = vt.cols();
        let mut data = Vec::with_capacity(ids.len() * w);
        for &i in ids {
            if i >= vt.rows() {
                return Err(Error::Invalid(format!(
                    "token id {i} outside table of {} rows",
                    vt.rows()
                )));
            }
            data.extend_from_slice(vt.row(i));
        }
        let v = Tensor::new(ids.len(), w, data)?;
        let ng = self.needs(table);
        Ok(self.push(v, Op::Gather(table, ids.to_vec()), ng))
    }

    /// Record a custom op whose forward value has already been computed.
    pub fn custom(&mut self, inputs: &[NodeId], value: Tensor, op: Box<dyn CustomOp>) -> NodeId {
        let ng = inputs.iter().any(|&p| self.needs(p));
        self.push(value, Op::Custom(inputs.to_vec(), op), ng)
    }

    /// Gradients of the scalar `root` with respect to every bound parameter.
    pub fn backward(&self, root: NodeId, store: &ParamStore) -> Result<GradBuffer> {
        let root_val = self.value(root);
        if root_val.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar root, got {:?}",
                root_val.shape()
            )));
        }
        root_val.ensure_finite("loss")?;
        let mut grads: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Param = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }

        let mut out = GradBuffer::zeros_like(store);
        for &(pid, nid) in &self.param_nodes {
            if let Some(g) = grads.get(nid.0).and_then(Option::as_ref) {
                g.ensure_finite(&format!("gradient of {}", store.get(pid).name))?;
                out.accumulate(pid, g);
            }
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |id: NodeId, delta: Tensor| {
            if !self.nodes[id.0].needs_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(t) => t.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    acc(*a, g.matmul(&vb.transpose()));
                }
                if self.needs(*b) {
                    acc(*b, va.transpose().matmul(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, b) => {
                acc(*a, g.clone());
                if self.needs(*b) {
                    acc(*b, column_sums(g));
                }
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.needs(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::MulRow(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        for (x, y) in ga.row_mut(r).iter_mut().zip(vb.data()) {
                            *x *= y;
                        }
                    }
                    acc(*a, ga);
                }
                if self.needs(*b) {
                    acc(*b, column_sums(&g.zip_map(va, |x, y| x * y)));
                }
            }
            Op::MulConst(a, c) => acc(*a, g.zip_map(c, |x, y| x * y)),
            Op::MulScalar(a, s) => {
                let k = self.value(*s).item();
                if self.needs(*a) {
                    acc(*a, g.scale(k));
                }
                if self.needs(*s) {
                    let dot: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, y)| x * y)
                        .sum();
                    acc(*s, Tensor::scalar(dot));
                }
            }
            Op::Scale(a, k) => acc(*a, g.scale(*k)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Unary(a, f) => {
                let x = self.value(*a);
                let d = Tensor::new(
                    x.rows(),
                    x.cols(),
                    x.data()
                        .iter()
                        .zip(node.value.data())
                        .zip(g.data())
                        .map(|((&xi, &yi), &gi)| gi * f.derivative(xi, yi))
                        .collect(),
                )
                .expect("shape");
                acc(*a, d);
            }
            Op::SliceCols(a, s) => {
                let va = self.value(*a);
                let mut d = Tensor::zeros(va.rows(), va.cols());
                for r in 0..g.rows() {
                    d.row_mut(r)[*s..*s + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*a, d);
            }
            Op::SliceRows(a, s) => {
                let va = self.value(*a);
                let mut d = Tensor::zeros(va.rows(), va.cols());
                let w = va.cols();
                d.data_mut()[s * w..s * w + g.len()].copy_from_slice(g.data());
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        acc(p, g.slice_cols(off, off + w));
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    if self.needs(p) {
                        acc(p, g.slice_rows(off, off + h));
                    }
                    off += h;
                }
            }
            Op::BroadcastRows(a) => acc(*a, column_sums(g)),
            Op::Sum(a) => {
                let va = self.value(*a);
                acc(*a, Tensor::filled(va.rows(), va.cols(), g.item()));
            }
            Op::MeanRows(a) => {
                let va = self.value(*a);
                let l = va.rows().max(1) as f64;
                let mut d = Tensor::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    for (x, y) in d.row_mut(r).iter_mut().zip(g.data()) {
                        *x = y / l;
                    }
                }
                acc(*a, d);
            }
            Op::Gather(table, ids) => {
                let vt = self.value(*table);
                let mut d = Tensor::zeros(vt.rows(), vt.cols());
                for (r, &i) in ids.iter().enumerate() {
                    for (x, y) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *x += y;
                    }
                }
                acc(*table, d);
            }
            Op::Custom(inputs, op) => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&p| self.value(p)).collect();
                let gs = op.backward(&vals, &node.value, g);
                debug_assert_eq!(gs.len(), inputs.len(), "{} arity", op.name());
                for (&p, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        acc(p, gi);
                    }
                }
            }
        }
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = vec![0.0; g.cols()];
    for r in 0..g.rows() {
        for (o, x) in out.iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    Tensor::row_vector(out)
}
