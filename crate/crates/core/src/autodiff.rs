//! A small tape-based reverse-mode differentiator over [`Mat`] values.
//!
//! Every operation evaluates eagerly and records its inputs. A node whose
//! inputs carry no gradient is stored as a constant, so a graph built only
//! from constants is just a forward evaluator. Gradient routing between the
//! parameter groups relies on [`Graph::detach`]: a detached node has the same
//! value as its source and no path back to it.

use crate::tensor::{matmul_at_acc, matmul_bt_acc, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    BroadcastRows(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    ClampMax(Var, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SumRows(Var),
    SumCols(Var),
    SumAll(Var),
    MeanOthers(Var),
    LogSoftmax(Var),
    LayerNorm(Var, f64),
    Gather(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar root with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` if no path reaches it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(shape.0, shape.1))
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Mat) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn detach(&mut self, v: Var) -> Var {
        if !self.requires_grad(v) {
            return v;
        }
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Mat::from_vec(va.rows, va.cols, data);
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `a + row` with `row` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!((1, va.cols), vr.shape(), "add_row shape mismatch");
        let mut value = va.clone();
        for r in 0..value.rows {
            for (x, y) in value.row_mut(r).iter_mut().zip(&vr.data) {
                *x += y;
            }
        }
        let rg = self.rg(&[a, row]);
        self.push(value, Op::AddRow(a, row), rg)
    }

    /// `a ⊙ row` with `row` broadcast over the rows of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!((1, va.cols), vr.shape(), "mul_row shape mismatch");
        let mut value = va.clone();
        for r in 0..value.rows {
            for (x, y) in value.row_mut(r).iter_mut().zip(&vr.data) {
                *x *= y;
            }
        }
        let rg = self.rg(&[a, row]);
        self.push(value, Op::MulRow(a, row), rg)
    }

    /// Repeats a `1 × c` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.rows, 1, "broadcast_rows expects a row vector");
        let mut data = Vec::with_capacity(rows * va.cols);
        for _ in 0..rows {
            data.extend_from_slice(&va.data);
        }
        let value = Mat::from_vec(rows, va.cols, data);
        let rg = self.rg(&[a]);
        self.push(value, Op::BroadcastRows(a), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn clamp_max(&mut self, a: Var, cap: f64) -> Var {
        self.unary(a, |x| x.min(cap), Op::ClampMax(a, cap))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut value = Mat::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let vp = self.value(p);
            assert_eq!(vp.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                value.row_mut(r)[offset..offset + vp.cols].copy_from_slice(vp.row(r));
            }
            offset += vp.cols;
        }
        let rg = self.rg(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let va = self.value(a);
        assert!(start + len <= va.cols, "slice out of range");
        let mut value = Mat::zeros(va.rows, len);
        for r in 0..va.rows {
            value.row_mut(r).copy_from_slice(&va.row(r)[start..start + len]);
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    /// Sums over rows: `r × c → 1 × c`, accumulating rows in index order.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut value = Mat::zeros(1, va.cols);
        for r in 0..va.rows {
            for (o, x) in value.data.iter_mut().zip(va.row(r)) {
                *o += x;
            }
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::SumRows(a), rg)
    }

    /// Sums over columns: `r × c → r × 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let data = (0..va.rows).map(|r| va.row(r).iter().sum()).collect();
        let value = Mat::from_vec(va.rows, 1, data);
        let rg = self.rg(&[a]);
        self.push(value, Op::SumCols(a), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Mat::from_vec(1, 1, vec![self.value(a).sum()]);
        let rg = self.rg(&[a]);
        self.push(value, Op::SumAll(a), rg)
    }

    /// Row `i` of the output is the mean of every other row of `a`,
    /// summed in ascending row order. Requires at least two rows.
    pub fn mean_others(&mut self, a: Var) -> Var {
        let value = mean_others_value(self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, Op::MeanOthers(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut value = va.clone();
        for r in 0..va.rows {
            let row = value.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::LogSoftmax(a), rg)
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let value = layer_norm_value(self.value(a), eps);
        let rg = self.rg(&[a]);
        self.push(value, Op::LayerNorm(a, eps), rg)
    }

    /// Picks column `idx[r]` of each row: `r × c → r × 1`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Var {
        let va = self.value(a);
        assert_eq!(idx.len(), va.rows, "gather index count");
        let data = idx.iter().enumerate().map(|(r, &c)| va.get(r, c)).collect();
        let value = Mat::from_vec(va.rows, 1, data);
        let rg = self.rg(&[a]);
        self.push(value, Op::Gather(a, idx.to_vec()), rg)
    }

    /// Reverse sweep from a `1 × 1` root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Mat>> = (0..=root.0).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Gradients { grads };
        }
        grads[root.0] = Some(Mat::filled(1, 1, 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |ga| matmul_bt_acc(&g.data, &vb.data, &mut ga.data, g.rows, g.cols, vb.rows));
                self.acc(grads, *b, |gb| matmul_at_acc(&va.data, &g.data, &mut gb.data, va.rows, va.cols, g.cols));
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| ga.add_assign(g));
                self.acc(grads, *b, |gb| gb.add_assign(g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| ga.add_assign(g));
                self.acc(grads, *b, |gb| zip_acc(gb, g, |_| -1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |ga| zip2_acc(ga, g, vb, |g, y| g * y));
                self.acc(grads, *b, |gb| zip2_acc(gb, g, va, |g, x| g * x));
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                self.acc(grads, *a, |ga| zip2_acc(ga, g, vb, |g, d| g / d));
                // d(a/b)/db = -(a/b)/b
                self.acc(grads, *b, |gb| {
                    for ((o, &gv), (&q, &d)) in gb.data.iter_mut().zip(&g.data).zip(y.data.iter().zip(&vb.data)) {
                        *o -= gv * q / d;
                    }
                });
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, |ga| ga.add_assign(g));
                self.acc(grads, *row, |gr| {
                    for r in 0..g.rows {
                        for (o, x) in gr.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                });
            }
            Op::MulRow(a, row) => {
                let (va, vr) = (self.value(*a), self.value(*row));
                self.acc(grads, *a, |ga| {
                    for r in 0..g.rows {
                        for ((o, gv), s) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(&vr.data) {
                            *o += gv * s;
                        }
                    }
                });
                self.acc(grads, *row, |gr| {
                    for r in 0..g.rows {
                        for ((o, gv), x) in gr.data.iter_mut().zip(g.row(r)).zip(va.row(r)) {
                            *o += gv * x;
                        }
                    }
                });
            }
            Op::BroadcastRows(a) => {
                self.acc(grads, *a, |ga| {
                    for r in 0..g.rows {
                        for (o, x) in ga.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                });
            }
            Op::Scale(a, k) => self.acc(grads, *a, |ga| zip_acc(ga, g, |_| *k)),
            Op::AddScalar(a) => self.acc(grads, *a, |ga| ga.add_assign(g)),
            Op::Tanh(a) => self.acc(grads, *a, |ga| zip2_acc(ga, g, y, |g, t| g * (1.0 - t * t))),
            Op::Sigmoid(a) => self.acc(grads, *a, |ga| zip2_acc(ga, g, y, |g, s| g * s * (1.0 - s))),
            Op::Softplus(a) => {
                let va = self.value(*a);
                self.acc(grads, *a, |ga| zip2_acc(ga, g, va, |g, x| g * sigmoid(x)));
            }
            Op::Exp(a) => self.acc(grads, *a, |ga| zip2_acc(ga, g, y, |g, e| g * e)),
            Op::Ln(a) => {
                let va = self.value(*a);
                self.acc(grads, *a, |ga| zip2_acc(ga, g, va, |g, x| g / x));
            }
            Op::Sqrt(a) => self.acc(grads, *a, |ga| zip2_acc(ga, g, y, |g, s| g / (2.0 * s))),
            Op::Square(a) => {
                let va = self.value(*a);
                self.acc(grads, *a, |ga| zip2_acc(ga, g, va, |g, x| 2.0 * g * x));
            }
            Op::ClampMax(a, cap) => {
                let va = self.value(*a);
                self.acc(grads, *a, |ga| zip2_acc(ga, g, va, |g, x| if x < *cap { g } else { 0.0 }));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols;
                    self.acc(grads, p, |gp| {
                        for r in 0..g.rows {
                            for (o, x) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + cols]) {
                                *o += x;
                            }
                        }
                    });
                    offset += cols;
                }
            }
            Op::SliceCols(a, start) => {
                self.acc(grads, *a, |ga| {
                    for r in 0..g.rows {
                        for (o, x) in ga.row_mut(r)[*start..*start + g.cols].iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                });
            }
            Op::SumRows(a) => {
                self.acc(grads, *a, |ga| {
                    for r in 0..ga.rows {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(&g.data) {
                            *o += x;
                        }
                    }
                });
            }
            Op::SumCols(a) => {
                self.acc(grads, *a, |ga| {
                    for r in 0..ga.rows {
                        let gv = g.data[r];
                        for o in ga.row_mut(r) {
                            *o += gv;
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let gv = g.data[0];
                self.acc(grads, *a, |ga| {
                    for o in &mut ga.data {
                        *o += gv;
                    }
                });
            }
            Op::MeanOthers(a) => {
                // The adjoint of mean-of-others is mean-of-others itself.
                let back = mean_others_value(g);
                self.acc(grads, *a, |ga| ga.add_assign(&back));
            }
            Op::LogSoftmax(a) => {
                self.acc(grads, *a, |ga| {
                    for r in 0..g.rows {
                        let gsum: f64 = g.row(r).iter().sum();
                        for ((o, gv), ly) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o += gv - ly.exp() * gsum;
                        }
                    }
                });
            }
            Op::LayerNorm(a, eps) => {
                let va = self.value(*a);
                self.acc(grads, *a, |ga| {
                    let c = va.cols as f64;
                    for r in 0..g.rows {
                        let x = va.row(r);
                        let mean = x.iter().sum::<f64>() / c;
                        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gr = g.row(r);
                        let yr = y.row(r);
                        let g_mean = gr.iter().sum::<f64>() / c;
                        let gy_mean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c;
                        for ((o, gv), yv) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o += inv * (gv - g_mean - yv * gy_mean);
                        }
                    }
                });
            }
            Op::Gather(a, idx) => {
                self.acc(grads, *a, |ga| {
                    for (r, &c) in idx.iter().enumerate() {
                        let cols = ga.cols;
                        ga.data[r * cols + c] += g.data[r];
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Mat>], v: Var, f: impl FnOnce(&mut Mat)) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Mat::zeros(node.value.rows, node.value.cols));
        f(slot);
    }
}

fn zip_acc(out: &mut Mat, g: &Mat, f: impl Fn(f64) -> f64) {
    for (o, &gv) in out.data.iter_mut().zip(&g.data) {
        *o += gv * f(gv);
    }
}

fn zip2_acc(out: &mut Mat, g: &Mat, other: &Mat, f: impl Fn(f64, f64) -> f64) {
    for ((o, &gv), &x) in out.data.iter_mut().zip(&g.data).zip(&other.data) {
        *o += f(gv, x);
    }
}

pub(crate) fn mean_others_value(a: &Mat) -> Mat {
    assert!(a.rows >= 2, "mean over other rows needs at least two rows");
    let denom = (a.rows - 1) as f64;
    let mut out = Mat::zeros(a.rows, a.cols);
    for i in 0..a.rows {
        let acc = out.row_mut(i);
        for j in 0..a.rows {
            if j == i {
                continue;
            }
            for (o, x) in acc.iter_mut().zip(a.row(j)) {
                *o += x;
            }
        }
        for o in acc.iter_mut() {
            *o /= denom;
        }
    }
    out
}

pub(crate) fn layer_norm_value(a: &Mat, eps: f64) -> Mat {
    let mut out = a.clone();
    let c = a.cols as f64;
    for r in 0..a.rows {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / c;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
        let inv = 1.0 / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    out
}
