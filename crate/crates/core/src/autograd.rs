//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation eagerly; [`Tape::backward`] walks the
//! records in reverse and returns a [`Gradients`] table indexed by [`Var`].
//! Nodes built only from constants never allocate gradients.

use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Gelu(Var),
    Tanh(Var),
    LayerNorm(Var),
    Softmax(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    GatherRows { table: Var, ids: Vec<usize> },
    BroadcastRows(Var),
    MeanRows(Var),
    Unfold { x: Var, kernel: usize, stride: usize, pad: usize },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>> },
    Mse(Var, Var),
    Sum(Var),
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
    /// Op-specific saved tensor (softmax probabilities, normalised rows, ...).
    saved: Option<Matrix<T>>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let th = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + T::of(3.0) * a * x * x)
}

/// Row-wise layer normalisation without affine terms.
pub fn layer_norm_rows<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    let n = T::of(x.cols() as f64);
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + T::of(LN_EPS)).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    out
}

/// Numerically stable row softmax; with `causal`, entry (i, j) for j > i is exactly zero.
pub fn softmax_rows<T: Scalar>(x: &Matrix<T>, causal: bool) -> Matrix<T> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let limit = if causal { (r + 1).min(x.cols()) } else { x.cols() };
        let src = &x.row(r)[..limit];
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let dst = out.row_mut(r);
        let mut total = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        for d in &mut dst[..limit] {
            *d /= total;
        }
    }
    out
}

fn unfold<T: Scalar>(x: &Matrix<T>, kernel: usize, stride: usize, pad: usize) -> Matrix<T> {
    let c = x.cols();
    let t_out = (x.rows() + 2 * pad - kernel) / stride + 1;
    let mut out = Matrix::zeros(t_out, kernel * c);
    for o in 0..t_out {
        for k in 0..kernel {
            let src = (o * stride + k) as isize - pad as isize;
            if src < 0 || src as usize >= x.rows() {
                continue;
            }
            out.row_mut(o)[k * c..(k + 1) * c].copy_from_slice(x.row(src as usize));
        }
    }
    out
}

/// Output length of a 1-D convolution window sweep.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (len + 2 * pad).checked_sub(kernel).map(|v| v / stride + 1)
}

pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool, saved: Option<Matrix<T>>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            saved,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true, None)
    }

    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false, None)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.get(0, 0)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng, None)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMulT(a, b), ng, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng, None)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng, None)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng, None)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, s), ng, None)
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row shapes");
        let b = self.value(row).as_slice().to_vec();
        let mut value = self.value(a).clone();
        for i in 0..r {
            for (v, &bv) in value.row_mut(i).iter_mut().zip(&b) {
                *v += bv;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(value, Op::AddRow(a, row), ng, None)
    }

    /// Multiplies every row of `a` elementwise by a `1 × n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "mul_row shapes");
        let g = self.value(row).as_slice().to_vec();
        let mut value = self.value(a).clone();
        for i in 0..r {
            for (v, &gv) in value.row_mut(i).iter_mut().zip(&g) {
                *v *= gv;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(value, Op::MulRow(a, row), ng, None)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        let ng = self.ng(a);
        self.push(value, Op::Gelu(a), ng, None)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        let ng = self.ng(a);
        self.push(value, Op::Tanh(a), ng, None)
    }

    pub fn layer_norm(&mut self, a: Var) -> Var {
        let value = layer_norm_rows(self.value(a));
        let ng = self.ng(a);
        // Per-row inverse std, needed by the backward pass.
        let x = self.value(a);
        let n = T::of(x.cols() as f64);
        let inv = Matrix::from_fn(x.rows(), 1, |r, _| {
            let row = x.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            T::one() / (var + T::of(LN_EPS)).sqrt()
        });
        self.push(value, Op::LayerNorm(a), ng, Some(inv))
    }

    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let value = softmax_rows(self.value(a), causal);
        let ng = self.ng(a);
        self.push(value, Op::Softmax(a), ng, None)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_cols(start, len);
        let ng = self.ng(a);
        self.push(value, Op::SliceCols { x: a, start }, ng, None)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::hstack(&mats).expect("concat_cols heights");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng, None)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_rows(start, len);
        let ng = self.ng(a);
        self.push(value, Op::SliceRows { x: a, start }, ng, None)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::vstack(&mats).expect("concat_rows widths");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng, None)
    }

    /// Embedding lookup: row `i` of the result is row `ids[i]` of `table`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut value = Matrix::zeros(ids.len(), t.cols());
        for (i, &id) in ids.iter().enumerate() {
            value.row_mut(i).copy_from_slice(t.row(id));
        }
        let ng = self.ng(table);
        self.push(
            value,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            ng,
            None,
        )
    }

    /// Repeats a `1 × n` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        assert_eq!(self.shape(a).0, 1, "broadcast_rows expects a row");
        let value = Matrix::broadcast_row(self.value(a).as_slice(), rows);
        let ng = self.ng(a);
        self.push(value, Op::BroadcastRows(a), ng, None)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).mean_rows();
        let ng = self.ng(a);
        self.push(value, Op::MeanRows(a), ng, None)
    }

    /// Sliding-window unfold along rows (time) used to express 1-D convolution as a product.
    pub fn unfold(&mut self, a: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let value = unfold(self.value(a), kernel, stride, pad);
        let ng = self.ng(a);
        self.push(
            value,
            Op::Unfold {
                x: a,
                kernel,
                stride,
                pad,
            },
            ng,
            None,
        )
    }

    /// Mean negative log-likelihood over the rows whose target is `Some`.
    ///
    /// Panics if no row is supervised; callers validate that beforehand.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), targets.len(), "cross_entropy targets");
        let count = targets.iter().filter(|t| t.is_some()).count();
        assert!(count > 0, "cross_entropy with no supervised rows");
        let probs = softmax_rows(l, false);
        let mut total = T::zero();
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let row = l.row(r);
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
                total += lse - row[t];
            }
        }
        let value = Matrix::filled(1, 1, total / T::of(count as f64));
        let ng = self.ng(logits);
        self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            ng,
            Some(probs),
        )
    }

    /// Mean squared difference over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mse shapes");
        let n = T::of(self.value(a).len() as f64);
        let total: T = self
            .value(a)
            .as_slice()
            .iter()
            .zip(self.value(b).as_slice())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let ng = self.ng(a) || self.ng(b);
        self.push(Matrix::filled(1, 1, total / n), Op::Mse(a, b), ng, None)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng, None)
    }

    /// Gradients of the `1 × 1` node `loss` with respect to every node that needs them.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.shape(loss), (1, 1), "backward from a scalar");
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node<T>, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let mut acc = |v: Var, delta: Matrix<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul_t(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).t_matmul(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, g.t_matmul(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, s) => acc(*a, g.map(|v| v * *s)),
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.ng(*row) {
                    acc(*row, column_sums(g));
                }
            }
            Op::MulRow(a, row) => {
                let rv = self.value(*row).as_slice();
                if self.ng(*a) {
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        for (v, &s) in d.row_mut(r).iter_mut().zip(rv) {
                            *v *= s;
                        }
                    }
                    acc(*a, d);
                }
                if self.ng(*row) {
                    acc(*row, column_sums(&g.zip_map(self.value(*a), |x, y| x * y)));
                }
            }
            Op::Gelu(a) => acc(*a, g.zip_map(self.value(*a), |d, x| d * gelu_grad(x))),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |d, y| d * (T::one() - y * y))),
            Op::LayerNorm(a) => {
                let y = &node.value;
                let inv = node.saved.as_ref().expect("layer norm saved stats");
                let n = T::of(y.cols() as f64);
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let gy = g.row(r);
                    let yr = y.row(r);
                    let mean_g = gy.iter().copied().sum::<T>() / n;
                    let mean_gy = gy.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / n;
                    let s = inv.get(r, 0);
                    for ((o, &gv), &yv) in d.row_mut(r).iter_mut().zip(gy).zip(yr) {
                        *o = s * (gv - mean_g - yv * mean_gy);
                    }
                }
                acc(*a, d);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                    for ((o, &yv), &gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                acc(*x, d);
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.shape(*x);
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                acc(*x, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.ng(p) {
                        acc(p, g.slice_cols(offset, w));
                    }
                    offset += w;
                }
            }
            Op::SliceRows { x, start } => {
                let (r, c) = self.shape(*x);
                let mut d = Matrix::zeros(r, c);
                for i in 0..g.rows() {
                    d.row_mut(start + i).copy_from_slice(g.row(i));
                }
                acc(*x, d);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    if self.ng(p) {
                        acc(p, g.slice_rows(offset, h));
                    }
                    offset += h;
                }
            }
            Op::GatherRows { table, ids } => {
                let (r, c) = self.shape(*table);
                let mut d = Matrix::zeros(r, c);
                for (i, &id) in ids.iter().enumerate() {
                    for (o, &v) in d.row_mut(id).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                acc(*table, d);
            }
            Op::BroadcastRows(a) => acc(*a, column_sums(g)),
            Op::MeanRows(a) => {
                let rows = self.shape(*a).0;
                let scale = T::one() / T::of(rows as f64);
                let row: Vec<T> = g.as_slice().iter().map(|&v| v * scale).collect();
                acc(*a, Matrix::broadcast_row(&row, rows));
            }
            Op::Unfold {
                x,
                kernel,
                stride,
                pad,
            } => {
                let (rows, c) = self.shape(*x);
                let mut d = Matrix::zeros(rows, c);
                for o in 0..g.rows() {
                    for k in 0..*kernel {
                        let src = (o * stride + k) as isize - *pad as isize;
                        if src < 0 || src as usize >= rows {
                            continue;
                        }
                        let gs = &g.row(o)[k * c..(k + 1) * c];
                        for (dv, &gv) in d.row_mut(src as usize).iter_mut().zip(gs) {
                            *dv += gv;
                        }
                    }
                }
                acc(*x, d);
            }
            Op::CrossEntropy { logits, targets } => {
                let probs = node.saved.as_ref().expect("saved probabilities");
                let count = targets.iter().filter(|t| t.is_some()).count();
                let scale = g.get(0, 0) / T::of(count as f64);
                let mut d = Matrix::zeros(probs.rows(), probs.cols());
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        for (o, &p) in d.row_mut(r).iter_mut().zip(probs.row(r)) {
                            *o = p * scale;
                        }
                        let cur = d.get(r, t);
                        d.set(r, t, cur - scale);
                    }
                }
                acc(*logits, d);
            }
            Op::Mse(a, b) => {
                let n = T::of(self.value(*a).len() as f64);
                let k = T::of(2.0) * g.get(0, 0) / n;
                let diff = self.value(*a).zip_map(self.value(*b), |x, y| (x - y) * k);
                if self.ng(*b) {
                    acc(*b, diff.map(|v| -v));
                }
                acc(*a, diff);
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Matrix::filled(r, c, g.get(0, 0)));
            }
        }
    }
}

fn column_sums<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, m.cols());
    for r in m.iter_rows() {
        for (o, &v) in out.as_mut_slice().iter_mut().zip(r) {
            *o += v;
        }
    }
    out
}
