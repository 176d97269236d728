//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates exact gradients for every
//! parameter that contributed to the output. Nodes that depend only on
//! constants are never visited on the way back.

use std::sync::Arc;

use super::{Grads, ParamId, ParamStore, Tensor2};
use crate::geometry::MIN_HEADING_SPEED;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rotation {
    /// `R(−θ)·u`: global vector into the frame.
    ToLocal,
    /// `R(θ)·u`: frame vector back to global.
    ToGlobal,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Tanh(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<[usize]>),
    SegmentMean(Var, Arc<[usize]>, Arc<[usize]>),
    ScaleRows(Var, Var),
    Heading(Var, Vec<bool>),
    Rotate(Var, Var, Rotation),
    SoftmaxRows(Var),
    CrossEntropy(Var, Vec<usize>),
    SquaredError(Var, Tensor2),
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::OneMinus(_) => "one_minus",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::SegmentMean(..) => "segment_mean",
            Op::ScaleRows(..) => "scale_rows",
            Op::Heading(..) => "heading",
            Op::Rotate(..) => "rotate",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::CrossEntropy(..) => "cross_entropy",
            Op::SquaredError(..) => "squared_error",
            Op::Sum(_) => "sum",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
    tracked: bool,
}

/// Recording of one forward pass against a read-only parameter snapshot.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(1024),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor2, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// The parameter's value as a tracked leaf; repeated calls share a node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let value = self.store.value(id).clone();
        let v = self.push(value, Op::Param(id), true);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let t = self.tracked(a) || self.tracked(b);
        self.push(value, Op::MatMul(a, b), t)
    }

    /// Adds a 1×c row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a row vector");
        assert_eq!(b.cols(), self.value(x).cols(), "bias width mismatch");
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            for (o, bv) in value.row_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let t = self.tracked(x) || self.tracked(bias);
        self.push(value, Op::AddBias(x, bias), t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let t = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let t = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Sub(a, b), t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let t = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Mul(a, b), t)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x * k);
        let t = self.tracked(a);
        self.push(value, Op::Scale(a, k), t)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 - x);
        let t = self.tracked(a);
        self.push(value, Op::OneMinus(a), t)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let t = self.tracked(a);
        self.push(value, Op::Tanh(a), t)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let t = self.tracked(a);
        self.push(value, Op::Sigmoid(a), t)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Tensor2::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let src = self.value(p);
            assert_eq!(src.rows(), rows, "concat row mismatch");
            let w = src.cols();
            for r in 0..rows {
                value.row_mut(r)[offset..offset + w].copy_from_slice(src.row(r));
            }
            offset += w;
        }
        let t = parts.iter().any(|&p| self.tracked(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), t)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        assert!(start + len <= src.cols(), "slice out of range");
        let mut value = Tensor2::zeros(src.rows(), len);
        for r in 0..src.rows() {
            value.row_mut(r).copy_from_slice(&src.row(r)[start..start + len]);
        }
        let t = self.tracked(a);
        self.push(value, Op::SliceCols(a, start), t)
    }

    /// Row `k` of the output is row `index[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Var {
        let src = self.value(a);
        let mut value = Tensor2::zeros(index.len(), src.cols());
        for (k, &i) in index.iter().enumerate() {
            value.row_mut(k).copy_from_slice(src.row(i));
        }
        let t = self.tracked(a);
        self.push(value, Op::GatherRows(a, index), t)
    }

    /// Mean of the rows of `a` grouped by `segment[k]` into `num_segments`
    /// output rows; empty groups yield zero rows.
    pub fn segment_mean(&mut self, a: Var, segment: Arc<[usize]>, num_segments: usize) -> Var {
        let src = self.value(a);
        assert_eq!(segment.len(), src.rows(), "segment length mismatch");
        let mut counts = vec![0usize; num_segments];
        let mut value = Tensor2::zeros(num_segments, src.cols());
        for (k, &s) in segment.iter().enumerate() {
            counts[s] += 1;
            for (o, v) in value.row_mut(s).iter_mut().zip(src.row(k)) {
                *o += v;
            }
        }
        for (s, &c) in counts.iter().enumerate() {
            if c > 0 {
                let inv = 1.0 / c as f64;
                value.row_mut(s).iter_mut().for_each(|v| *v *= inv);
            }
        }
        let t = self.tracked(a);
        self.push(value, Op::SegmentMean(a, segment, counts.into()), t)
    }

    /// Multiplies row `r` of `a` by `col[r, 0]`.
    pub fn scale_rows(&mut self, a: Var, col: Var) -> Var {
        let (src, c) = (self.value(a), self.value(col));
        assert_eq!(c.shape(), (src.rows(), 1), "scale_rows expects an r×1 column");
        let mut value = src.clone();
        for r in 0..value.rows() {
            let k = c.get(r, 0);
            value.row_mut(r).iter_mut().for_each(|v| *v *= k);
        }
        let t = self.tracked(a) || self.tracked(col);
        self.push(value, Op::ScaleRows(a, col), t)
    }

    /// Unit heading `(cos θ, sin θ)` of each velocity row; rows slower than
    /// [`MIN_HEADING_SPEED`] take the corresponding `fallback` row instead.
    pub fn heading(&mut self, velocity: Var, fallback: &Tensor2) -> Var {
        let v = self.value(velocity);
        assert_eq!(v.cols(), 2, "heading expects N×2 velocities");
        assert_eq!(fallback.shape(), v.shape(), "heading fallback shape");
        let mut value = Tensor2::zeros(v.rows(), 2);
        let mut active = Vec::with_capacity(v.rows());
        for r in 0..v.rows() {
            let (vx, vy) = (v.get(r, 0), v.get(r, 1));
            let speed = vx.hypot(vy);
            if speed >= MIN_HEADING_SPEED {
                value.set(r, 0, vx / speed);
                value.set(r, 1, vy / speed);
                active.push(true);
            } else {
                value.set(r, 0, fallback.get(r, 0));
                value.set(r, 1, fallback.get(r, 1));
                active.push(false);
            }
        }
        let t = self.tracked(velocity);
        self.push(value, Op::Heading(velocity, active), t)
    }

    /// Rotates each row of `u` (N×2) by the heading in the same row of
    /// `cs` (N×2 unit `(cos θ, sin θ)`).
    pub fn rotate(&mut self, u: Var, cs: Var, rotation: Rotation) -> Var {
        let (uv, h) = (self.value(u), self.value(cs));
        assert_eq!(uv.cols(), 2, "rotate expects N×2 vectors");
        assert_eq!(uv.shape(), h.shape(), "rotate shape mismatch");
        let mut value = Tensor2::zeros(uv.rows(), 2);
        for r in 0..uv.rows() {
            let (x, y, c, s) = (uv.get(r, 0), uv.get(r, 1), h.get(r, 0), h.get(r, 1));
            let (ox, oy) = match rotation {
                Rotation::ToLocal => (c * x + s * y, -s * x + c * y),
                Rotation::ToGlobal => (c * x - s * y, s * x + c * y),
            };
            value.set(r, 0, ox);
            value.set(r, 1, oy);
        }
        let t = self.tracked(u) || self.tracked(cs);
        self.push(value, Op::Rotate(u, cs, rotation), t)
    }

    /// Row-wise softmax with the row maximum subtracted first.
    pub fn softmax_rows(&mut self, logits: Var) -> Var {
        let value = softmax_rows(self.value(logits));
        let t = self.tracked(logits);
        self.push(value, Op::SoftmaxRows(logits), t)
    }

    /// Mean negative log-probability of `targets[r]` in row `r` of `probs`.
    /// Zero rows give zero loss.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize]) -> Var {
        let p = self.value(probs);
        assert_eq!(p.rows(), targets.len(), "one target per row");
        let value = cross_entropy(p, targets);
        let t = self.tracked(probs);
        self.push(Tensor2::scalar(value), Op::CrossEntropy(probs, targets.to_vec()), t)
    }

    /// Sum of squared differences to a constant target (1×1).
    pub fn squared_error(&mut self, pred: Var, target: Tensor2) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "squared_error shape mismatch");
        let value: f64 = p.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let t = self.tracked(pred);
        self.push(Tensor2::scalar(value), Op::SquaredError(pred, target), t)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum();
        let t = self.tracked(a);
        self.push(Tensor2::scalar(value), Op::Sum(a), t)
    }

    /// Name and index of the first node holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().enumerate().find(|(_, n)| !n.value.is_finite()).map(|(k, n)| {
            match n.op {
                Op::Param(id) => format!("parameter {}", self.store.get(id).name),
                ref op => format!("{} output (tape node {k}, shape {:?})", op.name(), n.value.shape()),
            }
        })
    }

    /// Gradients of the scalar `loss` with respect to every parameter used.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Tensor2>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor2::scalar(1.0));
        let mut out = Grads::empty(self.store.len());

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, g, &mut grads, &mut out);
        }
        out
    }

    fn acc(&self, grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node, g: Tensor2, grads: &mut [Option<Tensor2>], out: &mut Grads) {
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => match &mut out.0[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            },
            &Op::MatMul(a, b) => {
                if self.tracked(a) {
                    self.acc(grads, a, g.matmul_nt(self.value(b)));
                }
                if self.tracked(b) {
                    self.acc(grads, b, self.value(a).matmul_tn(&g));
                }
            }
            &Op::AddBias(x, b) => {
                if self.tracked(b) {
                    self.acc(grads, b, g.col_sums());
                }
                self.acc(grads, x, g);
            }
            &Op::Add(a, b) => {
                if self.tracked(b) {
                    self.acc(grads, b, g.clone());
                }
                self.acc(grads, a, g);
            }
            &Op::Sub(a, b) => {
                if self.tracked(b) {
                    self.acc(grads, b, g.map(|x| -x));
                }
                self.acc(grads, a, g);
            }
            &Op::Mul(a, b) => {
                if self.tracked(a) {
                    self.acc(grads, a, g.zip_map(self.value(b), |x, y| x * y));
                }
                if self.tracked(b) {
                    self.acc(grads, b, g.zip_map(self.value(a), |x, y| x * y));
                }
            }
            &Op::Scale(a, k) => self.acc(grads, a, g.map(|x| x * k)),
            &Op::OneMinus(a) => self.acc(grads, a, g.map(|x| -x)),
            &Op::Tanh(a) => {
                let d = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y));
                self.acc(grads, a, d);
            }
            &Op::Sigmoid(a) => {
                let d = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y));
                self.acc(grads, a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.tracked(p) {
                        let mut d = Tensor2::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        self.acc(grads, p, d);
                    }
                    offset += w;
                }
            }
            &Op::SliceCols(a, start) => {
                let src = self.value(a);
                let mut d = Tensor2::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    d.row_mut(r)[start..start + g.cols()].copy_from_slice(g.row(r));
                }
                self.acc(grads, a, d);
            }
            Op::GatherRows(a, index) => {
                let src = self.value(*a);
                let mut d = Tensor2::zeros(src.rows(), src.cols());
                for (k, &i) in index.iter().enumerate() {
                    for (o, v) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::SegmentMean(a, segment, counts) => {
                let src = self.value(*a);
                let mut d = Tensor2::zeros(src.rows(), src.cols());
                for (k, &s) in segment.iter().enumerate() {
                    let inv = 1.0 / counts[s] as f64;
                    for (o, v) in d.row_mut(k).iter_mut().zip(g.row(s)) {
                        *o = v * inv;
                    }
                }
                self.acc(grads, *a, d);
            }
            &Op::ScaleRows(a, col) => {
                let (src, c) = (self.value(a), self.value(col));
                if self.tracked(a) {
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        let k = c.get(r, 0);
                        d.row_mut(r).iter_mut().for_each(|v| *v *= k);
                    }
                    self.acc(grads, a, d);
                }
                if self.tracked(col) {
                    let mut d = Tensor2::zeros(c.rows(), 1);
                    for r in 0..src.rows() {
                        let dot: f64 = g.row(r).iter().zip(src.row(r)).map(|(x, y)| x * y).sum();
                        d.set(r, 0, dot);
                    }
                    self.acc(grads, col, d);
                }
            }
            Op::Heading(v, active) => {
                let vel = self.value(*v);
                let mut d = Tensor2::zeros(vel.rows(), 2);
                for r in 0..vel.rows() {
                    if !active[r] {
                        continue;
                    }
                    let (vx, vy) = (vel.get(r, 0), vel.get(r, 1));
                    let speed = vx.hypot(vy);
                    let inv3 = 1.0 / (speed * speed * speed);
                    let (gc, gs) = (g.get(r, 0), g.get(r, 1));
                    // c = vx/|v|, s = vy/|v|
                    d.set(r, 0, (gc * vy * vy - gs * vx * vy) * inv3);
                    d.set(r, 1, (-gc * vx * vy + gs * vx * vx) * inv3);
                }
                self.acc(grads, *v, d);
            }
            &Op::Rotate(u, cs, rotation) => {
                let (uv, h) = (self.value(u), self.value(cs));
                let mut du = Tensor2::zeros(uv.rows(), 2);
                let mut dh = Tensor2::zeros(uv.rows(), 2);
                for r in 0..uv.rows() {
                    let (x, y, c, s) = (uv.get(r, 0), uv.get(r, 1), h.get(r, 0), h.get(r, 1));
                    let (gx, gy) = (g.get(r, 0), g.get(r, 1));
                    match rotation {
                        Rotation::ToLocal => {
                            du.set(r, 0, c * gx - s * gy);
                            du.set(r, 1, s * gx + c * gy);
                            dh.set(r, 0, gx * x + gy * y);
                            dh.set(r, 1, gx * y - gy * x);
                        }
                        Rotation::ToGlobal => {
                            du.set(r, 0, c * gx + s * gy);
                            du.set(r, 1, -s * gx + c * gy);
                            dh.set(r, 0, gx * x + gy * y);
                            dh.set(r, 1, -gx * y + gy * x);
                        }
                    }
                }
                if self.tracked(cs) {
                    self.acc(grads, cs, dh);
                }
                self.acc(grads, u, du);
            }
            &Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Tensor2::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yv * (gv - dot);
                    }
                }
                self.acc(grads, a, d);
            }
            Op::CrossEntropy(p, targets) => {
                let probs = self.value(*p);
                let mut d = Tensor2::zeros(probs.rows(), probs.cols());
                if !targets.is_empty() {
                    let k = g.item() / targets.len() as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        d.set(r, t, -k / probs.get(r, t).max(f64::MIN_POSITIVE));
                    }
                }
                self.acc(grads, *p, d);
            }
            Op::SquaredError(a, target) => {
                let k = 2.0 * g.item();
                let d = self.value(*a).zip_map(target, |x, t| k * (x - t));
                self.acc(grads, *a, d);
            }
            &Op::Sum(a) => {
                let src = self.value(a);
                self.acc(grads, a, Tensor2::full(src.rows(), src.cols(), g.item()));
            }
        }
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Tensor2) -> Tensor2 {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// Mean over rows of `−ln probs[r, targets[r]]`; 0 for no rows.
pub fn cross_entropy(probs: &Tensor2, targets: &[usize]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(r, &t)| -probs.get(r, t).max(f64::MIN_POSITIVE).ln())
        .sum();
    total / targets.len() as f64
}

/// Mean squared difference over all elements.
pub fn mse(pred: &Tensor2, target: &Tensor2) -> f64 {
    assert_eq!(pred.shape(), target.shape(), "mse shape mismatch");
    if pred.is_empty() {
        return 0.0;
    }
    pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        / pred.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check::{grad_check, GradCheckConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor2 {
        Tensor2::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Exercises every structural op in one graph and checks its gradient.
    #[test]
    fn structural_ops_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let nodes = store.add("nodes", random_tensor(&mut rng, 4, 3)).unwrap();
        let vel = store.add("vel", random_tensor(&mut rng, 4, 2).map(|v| v * 3.0)).unwrap();
        let mix = store.add("mix", random_tensor(&mut rng, 5, 1)).unwrap();
        let senders: Arc<[usize]> = vec![0, 1, 2, 3, 1].into();
        let receivers: Arc<[usize]> = vec![1, 0, 0, 2, 2].into();
        let target = random_tensor(&mut rng, 4, 5);
        let f = |s: &ParamStore| {
            let mut t = Tape::new(s);
            let n = t.param(nodes);
            let v = t.param(vel);
            let m = t.param(mix);
            let cs = t.heading(v, &Tensor2::zeros(4, 2));
            let cs_r = t.gather_rows(cs, receivers.clone());
            let v_s = t.gather_rows(v, senders.clone());
            let local = t.rotate(v_s, cs_r, Rotation::ToLocal);
            let back = t.rotate(local, cs_r, Rotation::ToGlobal);
            let n_s = t.gather_rows(n, senders.clone());
            let edge = t.concat_cols(&[n_s, local, back]);
            let edge = t.tanh(edge);
            let edge = t.scale_rows(edge, m);
            let head = t.slice_cols(edge, 1, 5);
            let sig = t.sigmoid(head);
            let agg = t.segment_mean(sig, receivers.clone(), 4);
            let l = t.squared_error(agg, target.clone());
            (t.value(l).item(), t.backward(l))
        };
        let report = grad_check(f, &store, &GradCheckConfig::default());
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }

    #[test]
    fn heading_falls_back_for_slow_rows() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let v = t.constant(Tensor2::from_vec(2, 2, vec![0.0, 2.0, 0.01, 0.0]));
        let fallback = Tensor2::from_vec(2, 2, vec![1.0, 0.0, 0.6, 0.8]);
        let cs = t.heading(v, &fallback);
        assert_eq!(t.value(cs).data(), &[0.0, 1.0, 0.6, 0.8]);
    }

    #[test]
    fn segment_mean_of_empty_group_is_zero() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let a = t.constant(Tensor2::from_vec(2, 1, vec![2.0, 4.0]));
        let m = t.segment_mean(a, vec![1, 1].into(), 3);
        assert_eq!(t.value(m).data(), &[0.0, 3.0, 0.0]);
    }

    #[test]
    fn non_finite_nodes_are_reported() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor2::scalar(f64::NAN)).unwrap();
        let mut t = Tape::new(&store);
        let w = t.param(id);
        let _ = t.tanh(w);
        assert_eq!(t.first_non_finite().unwrap(), "parameter w");
    }
}
