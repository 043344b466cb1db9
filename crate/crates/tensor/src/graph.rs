//! Dynamic provenance graph with reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each operation appends a
//! node that remembers its inputs; [`Graph::backward`] walks the nodes in
//! reverse creation order, which is a valid topological order because inputs
//! always precede their consumers.

use std::sync::Arc;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm_acc, Tensor};
use crate::TensorError;

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat { parts: Vec<Var>, axis: usize },
    SliceRows { x: Var, start: usize },
    GatherRows { x: Var, idx: Arc<[usize]> },
    LeakyRelu { x: Var, slope: f64 },
    Elu { x: Var, alpha: f64 },
    Abs(Var),
    SegmentSoftmax { x: Var, seg: Arc<[usize]> },
    SegmentSum { x: Var, seg: Arc<[usize]> },
    SegmentMean { x: Var, seg: Arc<[usize]>, counts: Arc<[usize]> },
    MeanRows(Var),
    SumAll(Var),
    SquaredError { pred: Var, target: Var },
    BceWithLogits { logits: Var, target: Var },
    SoftmaxCrossEntropy { logits: Var, classes: Arc<[usize]> },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Whether parameter leaves participate in differentiation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    Enabled,
    Disabled,
}

pub struct Graph {
    nodes: Vec<Node>,
    mode: GradMode,
    bindings: Vec<(Var, ParamId)>,
    branches: Option<u64>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

impl Graph {
    pub fn new(mode: GradMode) -> Self {
        Graph {
            nodes: Vec::new(),
            mode,
            bindings: Vec::new(),
            branches: None,
        }
    }

    /// A gradient-free graph that fingerprints which side of every kink
    /// (leaky ReLU, ELU, abs) each element falls on.
    pub fn tracking_branches() -> Self {
        let mut g = Graph::no_grad();
        g.branches = Some(0xcbf2_9ce4_8422_2325);
        g
    }

    /// Fingerprint of the piecewise branches taken so far, if tracked.
    /// Two evaluations with equal fingerprints lie on the same smooth piece.
    pub fn branch_fingerprint(&self) -> Option<u64> {
        self.branches
    }

    fn record_branches(&mut self, x: Var, positive: fn(f64) -> bool) {
        if let Some(mut h) = self.branches {
            for &v in self.nodes[x.0].value.data() {
                h = (h ^ positive(v) as u64).wrapping_mul(0x0000_0100_0000_01b3);
            }
            self.branches = Some(h);
        }
    }

    pub fn with_grad() -> Self {
        Graph::new(GradMode::Enabled)
    }

    pub fn no_grad() -> Self {
        Graph::new(GradMode::Disabled)
    }

    pub fn mode(&self) -> GradMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of the last `backward` call, if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// A constant: never accumulates gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf that requires gradient (outside any parameter store).
    pub fn variable(&mut self, value: Tensor) -> Var {
        let rg = self.mode == GradMode::Enabled;
        self.push(value, Op::Leaf, rg)
    }

    /// Binds a stored parameter as a leaf. Under [`GradMode::Enabled`] its
    /// gradient can later be pushed back with [`ParamStore::accumulate`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let value = store.value(id).clone();
        let rg = self.mode == GradMode::Enabled;
        let v = self.push(value, Op::Leaf, rg);
        if rg {
            self.bindings.push((v, id));
        }
        v
    }

    pub(crate) fn bindings(&self) -> &[(Var, ParamId)] {
        &self.bindings
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Tensor::zeros(m, n);
        gemm_acc(out.data_mut(), ta, false, tb, false, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(shape_err("matmul_nt", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let mut out = Tensor::zeros(m, n);
        gemm_acc(out.data_mut(), ta, false, tb, true, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulNT(a, b), rg))
    }

    fn broadcast_binary(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        allow_col: bool,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, c) = ta.shape();
        let mut out = ta.clone();
        if tb.shape() == (r, c) {
            for (o, &y) in out.data_mut().iter_mut().zip(tb.data()) {
                *o = f(*o, y);
            }
        } else if tb.shape() == (1, c) {
            for i in 0..r {
                for (o, &y) in out.row_mut(i).iter_mut().zip(tb.data()) {
                    *o = f(*o, y);
                }
            }
        } else if allow_col && tb.shape() == (r, 1) {
            for i in 0..r {
                let y = tb.data()[i];
                for o in out.row_mut(i) {
                    *o = f(*o, y);
                }
            }
        } else {
            return Err(shape_err(name, ta, tb));
        }
        Ok(out)
    }

    /// Elementwise sum; `b` may also be a `1 × c` row broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.broadcast_binary("add", a, b, false, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.broadcast_binary("sub", a, b, false, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product; `b` may be same-shape, a `1 × c` row or an `r × 1`
    /// column broadcast over `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.broadcast_binary("mul", a, b, true, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Concatenates along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = match parts.first() {
            Some(&p) => self.value(p),
            None => return Err(TensorError::EmptyConcat),
        };
        let out = match axis {
            0 => {
                let cols = first.cols();
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.cols() != cols {
                        return Err(shape_err("concat", first, t));
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::from_vec(rows, cols, data)?
            }
            1 => {
                let rows = first.rows();
                let mut cols = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.rows() != rows {
                        return Err(shape_err("concat", first, t));
                    }
                    cols += t.cols();
                }
                let mut out = Tensor::zeros(rows, cols);
                let mut offset = 0;
                for &p in parts {
                    let t = self.value(p);
                    for r in 0..rows {
                        out.row_mut(r)[offset..offset + t.cols()].copy_from_slice(t.row(r));
                    }
                    offset += t.cols();
                }
                out
            }
            _ => return Err(TensorError::BadAxis(axis)),
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Rows `start..start + len` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        if start + len > t.rows() {
            return Err(TensorError::IndexOutOfRange {
                index: start + len,
                bound: t.rows() + 1,
            });
        }
        let cols = t.cols();
        let data = t.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::from_vec(len, cols, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceRows { x, start }, rg))
    }

    /// Row `idx[i]` of `x` becomes row `i` of the output; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: impl Into<Arc<[usize]>>) -> Result<Var, TensorError> {
        let idx: Arc<[usize]> = idx.into();
        let t = self.value(x);
        let cols = t.cols();
        let mut out = Tensor::zeros(idx.len(), cols);
        for (i, &j) in idx.iter().enumerate() {
            if j >= t.rows() {
                return Err(TensorError::IndexOutOfRange {
                    index: j,
                    bound: t.rows(),
                });
            }
            out.row_mut(i).copy_from_slice(t.row(j));
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::GatherRows { x, idx }, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.record_branches(x, |v| v > 0.0);
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu { x, slope }, rg)
    }

    /// ELU(x) = x for x > 0, α(eˣ − 1) otherwise.
    pub fn elu(&mut self, x: Var, alpha: f64) -> Var {
        self.record_branches(x, |v| v > 0.0);
        let out = self
            .value(x)
            .map(|v| if v > 0.0 { v } else { alpha * v.exp_m1() });
        let rg = self.rg(x);
        self.push(out, Op::Elu { x, alpha }, rg)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.record_branches(x, |v| v >= 0.0);
        let out = self.value(x).map(f64::abs);
        let rg = self.rg(x);
        self.push(out, Op::Abs(x), rg)
    }

    fn check_segments(
        &self,
        x: Var,
        seg: &[usize],
        n_segments: usize,
    ) -> Result<Vec<usize>, TensorError> {
        let rows = self.value(x).rows();
        if seg.len() != rows {
            return Err(TensorError::SegmentLength {
                rows,
                ids: seg.len(),
            });
        }
        let mut counts = vec![0usize; n_segments];
        for &s in seg {
            if s >= n_segments {
                return Err(TensorError::IndexOutOfRange {
                    index: s,
                    bound: n_segments,
                });
            }
            counts[s] += 1;
        }
        Ok(counts)
    }

    /// Softmax over the rows sharing a segment id, independently per column.
    /// Every segment in `0..n_segments` must have at least one row.
    pub fn segment_softmax(
        &mut self,
        x: Var,
        seg: impl Into<Arc<[usize]>>,
        n_segments: usize,
    ) -> Result<Var, TensorError> {
        let seg: Arc<[usize]> = seg.into();
        let counts = self.check_segments(x, &seg, n_segments)?;
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(TensorError::EmptySegment(empty));
        }
        let t = self.value(x);
        let cols = t.cols();
        let mut maxes = vec![f64::NEG_INFINITY; n_segments * cols];
        for (r, &s) in seg.iter().enumerate() {
            for (c, &v) in t.row(r).iter().enumerate() {
                let m = &mut maxes[s * cols + c];
                if v > *m {
                    *m = v;
                }
            }
        }
        let mut out = Tensor::zeros(t.rows(), cols);
        let mut sums = vec![0.0; n_segments * cols];
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..cols {
                let e = (t.get(r, c) - maxes[s * cols + c]).exp();
                out.set(r, c, e);
                sums[s * cols + c] += e;
            }
        }
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..cols {
                let v = out.get(r, c) / sums[s * cols + c];
                out.set(r, c, v);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SegmentSoftmax { x, seg }, rg))
    }

    /// Sums rows into `n_segments` output rows by segment id.
    pub fn segment_sum(
        &mut self,
        x: Var,
        seg: impl Into<Arc<[usize]>>,
        n_segments: usize,
    ) -> Result<Var, TensorError> {
        let seg: Arc<[usize]> = seg.into();
        self.check_segments(x, &seg, n_segments)?;
        let t = self.value(x);
        let mut out = Tensor::zeros(n_segments, t.cols());
        for (r, &s) in seg.iter().enumerate() {
            for (o, &v) in out.row_mut(s).iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SegmentSum { x, seg }, rg))
    }

    /// Mean of the rows in each segment; empty segments yield zero rows.
    pub fn segment_mean(
        &mut self,
        x: Var,
        seg: impl Into<Arc<[usize]>>,
        n_segments: usize,
    ) -> Result<Var, TensorError> {
        let seg: Arc<[usize]> = seg.into();
        let counts = self.check_segments(x, &seg, n_segments)?;
        let t = self.value(x);
        let mut out = Tensor::zeros(n_segments, t.cols());
        for (r, &s) in seg.iter().enumerate() {
            for (o, &v) in out.row_mut(s).iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        for (s, &c) in counts.iter().enumerate() {
            if c > 0 {
                let inv = 1.0 / c as f64;
                out.row_mut(s).iter_mut().for_each(|v| *v *= inv);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::SegmentMean {
                x,
                seg,
                counts: counts.into(),
            },
            rg,
        ))
    }

    /// Column means as a `1 × c` row; an empty input yields zeros.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut out = Tensor::zeros(1, t.cols());
        for r in 0..t.rows() {
            for (o, &v) in out.data_mut().iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        if t.rows() > 0 {
            let inv = 1.0 / t.rows() as f64;
            out.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        let rg = self.rg(x);
        self.push(out, Op::MeanRows(x), rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    /// Mean of `(pred − target)²` over all elements, as a scalar.
    pub fn squared_error(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() || tp.is_empty() {
            return Err(shape_err("squared_error", tp, tt));
        }
        let s: f64 = tp
            .data()
            .iter()
            .zip(tt.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let out = Tensor::scalar(s / tp.len() as f64);
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(out, Op::SquaredError { pred, target }, rg))
    }

    /// Mean binary cross-entropy of sigmoid(`logits`) against 0/1 `target`.
    pub fn bce_with_logits(&mut self, logits: Var, target: Var) -> Result<Var, TensorError> {
        let (tl, tt) = (self.value(logits), self.value(target));
        if tl.shape() != tt.shape() || tl.is_empty() {
            return Err(shape_err("bce_with_logits", tl, tt));
        }
        let s: f64 = tl
            .data()
            .iter()
            .zip(tt.data())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let out = Tensor::scalar(s / tl.len() as f64);
        let rg = self.rg(logits);
        Ok(self.push(out, Op::BceWithLogits { logits, target }, rg))
    }

    /// Mean over rows of `−log softmax(logits[r])[classes[r]]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        classes: impl Into<Arc<[usize]>>,
    ) -> Result<Var, TensorError> {
        let classes: Arc<[usize]> = classes.into();
        let t = self.value(logits);
        if classes.len() != t.rows() || t.rows() == 0 {
            return Err(TensorError::SegmentLength {
                rows: t.rows(),
                ids: classes.len(),
            });
        }
        let mut total = 0.0;
        for (r, &c) in classes.iter().enumerate() {
            if c >= t.cols() {
                return Err(TensorError::IndexOutOfRange {
                    index: c,
                    bound: t.cols(),
                });
            }
            let row = t.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[c];
        }
        let out = Tensor::scalar(total / t.rows() as f64);
        let rg = self.rg(logits);
        Ok(self.push(out, Op::SoftmaxCrossEntropy { logits, classes }, rg))
    }

    /// Populates gradients of every node that requires one with respect to
    /// the scalar `loss`. Previous gradients are cleared first.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::NotScalarLoss(shape));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.rg(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.backprop_node(i, &op, &g);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, delta: Tensor) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.add_assign(&delta),
            None => node.grad = Some(delta),
        }
    }

    /// Reduces a gradient of the output shape down to `b`'s broadcast shape.
    fn reduce_broadcast(&self, b: Var, g: &Tensor, sign: f64) -> Tensor {
        let tb = self.value(b);
        if tb.shape() == g.shape() {
            return if sign == 1.0 { g.clone() } else { g.map(|x| -x) };
        }
        let mut out = Tensor::zeros(1, g.cols());
        for r in 0..g.rows() {
            for (o, &v) in out.data_mut().iter_mut().zip(g.row(r)) {
                *o += sign * v;
            }
        }
        out
    }

    fn backprop_node(&mut self, i: usize, op: &Op, g: &Tensor) {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(a) {
                    let tb = self.value(b);
                    let (m, n, k) = (g.rows(), g.cols(), tb.rows());
                    let mut da = Tensor::zeros(m, k);
                    gemm_acc(da.data_mut(), g, false, tb, true, m, n, k);
                    self.acc(a, da);
                }
                if self.rg(b) {
                    let ta = self.value(a);
                    let (m, k, n) = (ta.rows(), ta.cols(), g.cols());
                    let mut db = Tensor::zeros(k, n);
                    gemm_acc(db.data_mut(), ta, true, g, false, k, m, n);
                    self.acc(b, db);
                }
            }
            Op::MatMulNT(a, b) => {
                // out = a bᵀ: da = g b, db = gᵀ a
                if self.rg(a) {
                    let tb = self.value(b);
                    let (m, n, k) = (g.rows(), g.cols(), tb.cols());
                    let mut da = Tensor::zeros(m, k);
                    gemm_acc(da.data_mut(), g, false, tb, false, m, n, k);
                    self.acc(a, da);
                }
                if self.rg(b) {
                    let ta = self.value(a);
                    let (m, n, k) = (g.rows(), g.cols(), ta.cols());
                    let mut db = Tensor::zeros(n, k);
                    gemm_acc(db.data_mut(), g, true, ta, false, n, m, k);
                    self.acc(b, db);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Add(..)) { 1.0 } else { -1.0 };
                if self.rg(a) {
                    self.acc(a, g.clone());
                }
                if self.rg(b) {
                    let db = self.reduce_broadcast(b, g, sign);
                    self.acc(b, db);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (r, c) = g.shape();
                let b_at = |i: usize, j: usize| match tb.shape() {
                    s if s == (r, c) => tb.get(i, j),
                    (1, _) => tb.get(0, j),
                    _ => tb.get(i, 0),
                };
                let da = self.rg(a).then(|| {
                    let mut da = g.clone();
                    for i in 0..r {
                        for j in 0..c {
                            da.set(i, j, g.get(i, j) * b_at(i, j));
                        }
                    }
                    da
                });
                let db = self.rg(b).then(|| {
                    let mut db = Tensor::zeros(tb.rows(), tb.cols());
                    for i in 0..r {
                        for j in 0..c {
                            let v = g.get(i, j) * ta.get(i, j);
                            match tb.shape() {
                                s if s == (r, c) => db.set(i, j, v),
                                (1, _) => db.data_mut()[j] += v,
                                _ => db.data_mut()[i] += v,
                            }
                        }
                    }
                    db
                });
                if let Some(da) = da {
                    self.acc(a, da);
                }
                if let Some(db) = db {
                    self.acc(b, db);
                }
            }
            Op::Scale(a, s) => self.acc(a, g.map(|x| x * s)),
            Op::Concat { ref parts, axis } => {
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.shape(p);
                    if self.rg(p) {
                        let d = if axis == 0 {
                            let data = g.data()[offset * pc..(offset + pr) * pc].to_vec();
                            Tensor::from_vec(pr, pc, data).expect("concat slice")
                        } else {
                            let mut d = Tensor::zeros(pr, pc);
                            for r in 0..pr {
                                d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + pc]);
                            }
                            d
                        };
                        self.acc(p, d);
                    }
                    offset += if axis == 0 { pr } else { pc };
                }
            }
            Op::SliceRows { x, start } => {
                let (xr, xc) = self.shape(x);
                let mut d = Tensor::zeros(xr, xc);
                d.data_mut()[start * xc..start * xc + g.len()].copy_from_slice(g.data());
                self.acc(x, d);
            }
            Op::GatherRows { x, ref idx } => {
                let (xr, xc) = self.shape(x);
                let mut d = Tensor::zeros(xr, xc);
                for (r, &j) in idx.iter().enumerate() {
                    for (o, &v) in d.row_mut(j).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.acc(x, d);
            }
            Op::LeakyRelu { x, slope } => {
                let tx = self.value(x);
                let mut d = g.clone();
                for (o, &v) in d.data_mut().iter_mut().zip(tx.data()) {
                    if v <= 0.0 {
                        *o *= slope;
                    }
                }
                self.acc(x, d);
            }
            Op::Elu { x, alpha } => {
                let tx = self.value(x);
                let mut d = g.clone();
                for (o, &v) in d.data_mut().iter_mut().zip(tx.data()) {
                    if v <= 0.0 {
                        *o *= alpha * v.exp();
                    }
                }
                self.acc(x, d);
            }
            Op::Abs(x) => {
                let tx = self.value(x);
                let mut d = g.clone();
                for (o, &v) in d.data_mut().iter_mut().zip(tx.data()) {
                    *o *= if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
                self.acc(x, d);
            }
            Op::SegmentSoftmax { x, ref seg } => {
                let y = &self.nodes[i].value;
                let cols = y.cols();
                let n_seg = seg.iter().max().map_or(0, |m| m + 1);
                let mut dots = vec![0.0; n_seg * cols];
                for (r, &s) in seg.iter().enumerate() {
                    for c in 0..cols {
                        dots[s * cols + c] += y.get(r, c) * g.get(r, c);
                    }
                }
                let mut d = Tensor::zeros(y.rows(), cols);
                for (r, &s) in seg.iter().enumerate() {
                    for c in 0..cols {
                        d.set(r, c, y.get(r, c) * (g.get(r, c) - dots[s * cols + c]));
                    }
                }
                self.acc(x, d);
            }
            Op::SegmentSum { x, ref seg } => {
                let (xr, xc) = self.shape(x);
                let mut d = Tensor::zeros(xr, xc);
                for (r, &s) in seg.iter().enumerate() {
                    d.row_mut(r).copy_from_slice(g.row(s));
                }
                self.acc(x, d);
            }
            Op::SegmentMean {
                x,
                ref seg,
                ref counts,
            } => {
                let (xr, xc) = self.shape(x);
                let mut d = Tensor::zeros(xr, xc);
                for (r, &s) in seg.iter().enumerate() {
                    let inv = 1.0 / counts[s] as f64;
                    for (o, &v) in d.row_mut(r).iter_mut().zip(g.row(s)) {
                        *o = v * inv;
                    }
                }
                self.acc(x, d);
            }
            Op::MeanRows(x) => {
                let (xr, xc) = self.shape(x);
                let mut d = Tensor::zeros(xr, xc);
                let inv = 1.0 / xr.max(1) as f64;
                for r in 0..xr {
                    for (o, &v) in d.row_mut(r).iter_mut().zip(g.data()) {
                        *o = v * inv;
                    }
                }
                self.acc(x, d);
            }
            Op::SumAll(x) => {
                let (xr, xc) = self.shape(x);
                let gv = g.data()[0];
                self.acc(x, Tensor::filled(xr, xc, gv));
            }
            Op::SquaredError { pred, target } => {
                let gv = g.data()[0];
                let (tp, tt) = (self.value(pred), self.value(target));
                let scale = 2.0 * gv / tp.len() as f64;
                let mut d = tp.clone();
                for (o, &t) in d.data_mut().iter_mut().zip(tt.data()) {
                    *o = scale * (*o - t);
                }
                if self.rg(target) {
                    let dt = d.map(|v| -v);
                    self.acc(target, dt);
                }
                self.acc(pred, d);
            }
            Op::BceWithLogits { logits, target } => {
                let gv = g.data()[0];
                let (tl, tt) = (self.value(logits), self.value(target));
                let scale = gv / tl.len() as f64;
                let mut d = tl.clone();
                for (o, &y) in d.data_mut().iter_mut().zip(tt.data()) {
                    let p = 1.0 / (1.0 + (-*o).exp());
                    *o = scale * (p - y);
                }
                self.acc(logits, d);
            }
            Op::SoftmaxCrossEntropy { logits, ref classes } => {
                let gv = g.data()[0];
                let tl = self.value(logits);
                let scale = gv / tl.rows() as f64;
                let mut d = Tensor::zeros(tl.rows(), tl.cols());
                for (r, &c) in classes.iter().enumerate() {
                    let row = tl.row(r);
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                    for (j, &v) in row.iter().enumerate() {
                        let p = (v - m).exp() / z;
                        let y = if j == c { 1.0 } else { 0.0 };
                        d.set(r, j, scale * (p - y));
                    }
                }
                self.acc(logits, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn segment_softmax_symmetric_pair() {
        let mut g = Graph::no_grad();
        let x = g.constant(t(&[&[0.3], &[0.3]]));
        let y = g.segment_softmax(x, vec![0, 0], 1).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn segment_softmax_rejects_empty_segment() {
        let mut g = Graph::no_grad();
        let x = g.constant(t(&[&[1.0], &[2.0]]));
        let err = g.segment_softmax(x, vec![0, 2], 3).unwrap_err();
        assert!(matches!(err, TensorError::EmptySegment(1)));
    }

    #[test]
    fn elu_definition() {
        let mut g = Graph::no_grad();
        let x = g.constant(t(&[&[2.0, -50.0, 0.0]]));
        let y = g.elu(x, 1.0);
        let v = g.value(y).data();
        assert_eq!(v[0], 2.0);
        assert!((v[1] + 1.0).abs() < 1e-12);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn matmul_shape_mismatch_reports_both_shapes() {
        let mut g = Graph::no_grad();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(4, 2));
        let err = g.matmul(a, b).unwrap_err();
        assert!(matches!(
            err,
            TensorError::ShapeMismatch {
                lhs: (2, 3),
                rhs: (4, 2),
                ..
            }
        ));
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("4x2"), "{msg}");
    }

    #[test]
    fn mean_rows_example() {
        let mut g = Graph::no_grad();
        let x = g.constant(t(&[&[1.0, 3.0], &[3.0, 5.0]]));
        let m = g.mean_rows(x);
        assert_eq!(g.value(m).data(), &[2.0, 4.0]);
    }

    #[test]
    fn squared_error_gradient_at_five() {
        let mut g = Graph::with_grad();
        let x = g.variable(Tensor::scalar(5.0));
        let target = g.constant(Tensor::scalar(3.0));
        let loss = g.squared_error(x, target).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[4.0]);
        assert!(g.grad(target).is_none());
    }

    #[test]
    fn reused_value_accumulates_both_paths() {
        // loss = x·x + 3x at x = 2 -> 2x + 3 = 7
        let mut g = Graph::with_grad();
        let x = g.variable(Tensor::scalar(2.0));
        let sq = g.mul(x, x).unwrap();
        let tx = g.scale(x, 3.0);
        let loss = g.add(sq, tx).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::with_grad();
        let x = g.variable(Tensor::zeros(1, 2));
        assert!(matches!(
            g.backward(x),
            Err(TensorError::NotScalarLoss((1, 2)))
        ));
    }

    #[test]
    fn no_grad_graph_produces_no_gradients() {
        let mut g = Graph::no_grad();
        let x = g.variable(Tensor::scalar(1.0));
        let y = g.scale(x, 2.0);
        let loss = g.sum_all(y);
        g.backward(loss).unwrap();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn broadcast_add_reduces_gradient_over_rows() {
        let mut g = Graph::with_grad();
        let a = g.variable(Tensor::zeros(3, 2));
        let b = g.variable(Tensor::zeros(1, 2));
        let s = g.add(a, b).unwrap();
        let loss = g.sum_all(s);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn softmax_cross_entropy_value() {
        let mut g = Graph::no_grad();
        let x = g.constant(t(&[&[0.0, 0.0]]));
        let l = g.softmax_cross_entropy(x, vec![1]).unwrap();
        assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
