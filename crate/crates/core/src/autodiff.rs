//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] owns every node of one forward computation: values are computed
//! eagerly as operations are applied, and op records are appended in creation
//! order, which is already a topological order. [`Tensor`] is a cheap handle
//! into the tape. Calling [`Tensor::backward`] on a scalar walks the records
//! in reverse exactly once and accumulates gradients into every leaf created
//! with `requires_grad`.
//!
//! A tape is confined to a single thread; gradient accumulation order is
//! fixed by node order, so results are bit-identical run to run.

use crate::tensor::{Scalar, TensorData};
use std::cell::RefCell;
use std::rc::Rc;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward requires a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

fn shape_err<T>(op: &'static str, detail: String) -> Result<T, AutodiffError> {
    Err(AutodiffError::Shape { op, detail })
}

/// One recorded operation; indices refer to tape nodes.
enum Op<T> {
    MatMul { a: usize, b: usize, out: usize },
    MatVec { a: usize, x: usize, out: usize },
    Conv1d { input: usize, filter: usize, bias: usize, stride: usize, out: usize },
    MaxPoolTime { input: usize, out: usize, argmax: Vec<usize> },
    Relu { input: usize, out: usize },
    Tanh { input: usize, out: usize },
    Sigmoid { input: usize, out: usize },
    Add { a: usize, b: usize, out: usize },
    Mul { a: usize, b: usize, out: usize },
    Concat { parts: Vec<usize>, out: usize },
    StackRows { rows: Vec<usize>, out: usize },
    GatherCols { table: usize, indices: Vec<usize>, pad: Option<usize>, out: usize },
    Reshape { input: usize, out: usize },
    Sum { input: usize, out: usize },
    Scale { input: usize, factor: T, out: usize },
    SoftmaxXent { logits: usize, labels: Vec<usize>, out: usize },
}

struct TapeInner<T> {
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<T>>,
    // Empty buffer when the node does not require grad.
    grads: Vec<Vec<T>>,
    requires: Vec<bool>,
    leaf: Vec<bool>,
    ops: Vec<Op<T>>,
}

impl<T: Scalar> TapeInner<T> {
    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, requires: bool, leaf: bool) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = if requires { vec![T::zero(); value.len()] } else { Vec::new() };
        self.shapes.push(shape);
        self.values.push(value);
        self.grads.push(grad);
        self.requires.push(requires);
        self.leaf.push(leaf);
        self.values.len() - 1
    }
}

/// Records one forward computation and replays it backwards for gradients.
pub struct Tape<T: Scalar> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Scalar> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Self { inner: Rc::clone(&self.inner) }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                shapes: Vec::new(),
                values: Vec::new(),
                grads: Vec::new(),
                requires: Vec::new(),
                leaf: Vec::new(),
                ops: Vec::new(),
            })),
        }
    }

    /// Registers an input node. Leaves created with `requires_grad` keep a
    /// gradient accumulator that survives repeated backward passes until
    /// [`Tape::zero_grads`].
    pub fn leaf(&self, value: TensorData<T>, requires_grad: bool) -> Tensor<T> {
        let (shape, data) = value.into_parts();
        let node = self.inner.borrow_mut().push(shape, data, requires_grad, true);
        Tensor { inner: Rc::clone(&self.inner), node }
    }

    /// An input that never receives gradient (masks, initial states).
    pub fn constant(&self, value: TensorData<T>) -> Tensor<T> {
        self.leaf(value, false)
    }

    /// Clears every gradient accumulator on the tape.
    pub fn zero_grads(&self) {
        for g in self.inner.borrow_mut().grads.iter_mut() {
            g.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().values.len()
    }
}

/// Handle to one tape node.
pub struct Tensor<T: Scalar> {
    inner: Rc<RefCell<TapeInner<T>>>,
    node: usize,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self { inner: Rc::clone(&self.inner), node: self.node }
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn value(&self) -> TensorData<T> {
        let inner = self.inner.borrow();
        TensorData::new(inner.shapes[self.node].clone(), inner.values[self.node].clone())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shapes[self.node].clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires[self.node]
    }

    /// Accumulated gradient; `None` when the node does not participate.
    pub fn grad(&self) -> Option<TensorData<T>> {
        let inner = self.inner.borrow();
        if !inner.requires[self.node] {
            return None;
        }
        Some(TensorData::new(inner.shapes[self.node].clone(), inner.grads[self.node].clone()))
    }

    fn same_tape(&self, other: &Tensor<T>) {
        assert!(Rc::ptr_eq(&self.inner, &other.inner), "tensors must share a tape");
    }

    fn emit(&self, shape: Vec<usize>, value: Vec<T>, requires: bool, op: impl FnOnce(usize) -> Op<T>) -> Tensor<T> {
        let mut inner = self.inner.borrow_mut();
        let out = inner.push(shape, value, requires, false);
        inner.ops.push(op(out));
        Tensor { inner: Rc::clone(&self.inner), node: out }
    }

    /// Matrix product `(p×q)·(q×s) → p×s`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, AutodiffError> {
        self.same_tape(rhs);
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", format!("{sa:?} x {sb:?}"));
        }
        let (p, q, s) = (sa[0], sa[1], sb[1]);
        let inner = self.inner.borrow();
        let (a, b) = (&inner.values[self.node], &inner.values[rhs.node]);
        let mut out = vec![T::zero(); p * s];
        for i in 0..p {
            for k in 0..q {
                let aik = a[i * q + k];
                for j in 0..s {
                    out[i * s + j] = out[i * s + j] + aik * b[k * s + j];
                }
            }
        }
        let requires = inner.requires[self.node] || inner.requires[rhs.node];
        drop(inner);
        let (an, bn) = (self.node, rhs.node);
        Ok(self.emit(vec![p, s], out, requires, |o| Op::MatMul { a: an, b: bn, out: o }))
    }

    /// Matrix–vector product `(p×q)·(q) → p`.
    pub fn matvec(&self, x: &Tensor<T>) -> Result<Tensor<T>, AutodiffError> {
        self.same_tape(x);
        let (sa, sx) = (self.shape(), x.shape());
        if sa.len() != 2 || sx.len() != 1 || sa[1] != sx[0] {
            return shape_err("matvec", format!("{sa:?} x {sx:?}"));
        }
        let (p, q) = (sa[0], sa[1]);
        let inner = self.inner.borrow();
        let (a, v) = (&inner.values[self.node], &inner.values[x.node]);
        let out: Vec<T> = (0..p)
            .map(|i| (0..q).fold(T::zero(), |acc, k| acc + a[i * q + k] * v[k]))
            .collect();
        let requires = inner.requires[self.node] || inner.requires[x.node];
        drop(inner);
        let (an, xn) = (self.node, x.node);
        Ok(self.emit(vec![p], out, requires, |o| Op::MatVec { a: an, x: xn, out: o }))
    }

    /// Valid cross-correlation over the time axis with stride.
    ///
    /// `self` is `channels×T`, `filter` is `out_channels×channels×w`, `bias`
    /// is `out_channels`; the result is `out_channels×T'` with
    /// `T' = (T − w)/stride + 1`.
    pub fn conv1d(&self, filter: &Tensor<T>, bias: &Tensor<T>, stride: usize) -> Result<Tensor<T>, AutodiffError> {
        self.same_tape(filter);
        self.same_tape(bias);
        let (si, sf, sb) = (self.shape(), filter.shape(), bias.shape());
        if si.len() != 2 || sf.len() != 3 || sb.len() != 1 {
            return shape_err("conv1d", format!("input {si:?}, filter {sf:?}, bias {sb:?}"));
        }
        let (ch, t) = (si[0], si[1]);
        let (oc, fc, w) = (sf[0], sf[1], sf[2]);
        if fc != ch || sb[0] != oc || w == 0 {
            return shape_err("conv1d", format!("input {si:?}, filter {sf:?}, bias {sb:?}"));
        }
        if stride == 0 {
            return shape_err("conv1d", "stride must be at least 1".into());
        }
        if t < w {
            return shape_err("conv1d", format!("window {w} exceeds temporal length {t}"));
        }
        let tp = (t - w) / stride + 1;
        let inner = self.inner.borrow();
        let (inp, flt, bia) = (&inner.values[self.node], &inner.values[filter.node], &inner.values[bias.node]);
        let mut out = vec![T::zero(); oc * tp];
        for o in 0..oc {
            for j in 0..tp {
                let start = j * stride;
                let mut acc = bia[o];
                for c in 0..ch {
                    let in_row = c * t + start;
                    let f_row = (o * ch + c) * w;
                    for k in 0..w {
                        acc = acc + inp[in_row + k] * flt[f_row + k];
                    }
                }
                out[o * tp + j] = acc;
            }
        }
        let requires =
            inner.requires[self.node] || inner.requires[filter.node] || inner.requires[bias.node];
        drop(inner);
        let (i, f, b) = (self.node, filter.node, bias.node);
        Ok(self.emit(vec![oc, tp], out, requires, |o| Op::Conv1d {
            input: i,
            filter: f,
            bias: b,
            stride,
            out: o,
        }))
    }

    /// Per-channel maximum over the time axis; ties resolve to the earliest
    /// position, which is also where the gradient is routed.
    pub fn maxpool_over_time(&self) -> Result<Tensor<T>, AutodiffError> {
        let s = self.shape();
        if s.len() != 2 || s[1] == 0 {
            return shape_err("maxpool_over_time", format!("{s:?}"));
        }
        let (ch, t) = (s[0], s[1]);
        let inner = self.inner.borrow();
        let v = &inner.values[self.node];
        let mut out = Vec::with_capacity(ch);
        let mut argmax = Vec::with_capacity(ch);
        for c in 0..ch {
            let row = &v[c * t..(c + 1) * t];
            let (mut best, mut best_j) = (row[0], 0usize);
            for (j, &x) in row.iter().enumerate().skip(1) {
                if x > best {
                    best = x;
                    best_j = j;
                }
            }
            out.push(best);
            argmax.push(best_j);
        }
        let requires = inner.requires[self.node];
        drop(inner);
        let i = self.node;
        Ok(self.emit(vec![ch], out, requires, |o| Op::MaxPoolTime { input: i, out: o, argmax }))
    }

    fn unary(&self, op: fn(usize, usize) -> Op<T>, f: impl Fn(T) -> T) -> Tensor<T> {
        let inner = self.inner.borrow();
        let out: Vec<T> = inner.values[self.node].iter().map(|&x| f(x)).collect();
        let shape = inner.shapes[self.node].clone();
        let requires = inner.requires[self.node];
        drop(inner);
        let i = self.node;
        self.emit(shape, out, requires, |o| op(i, o))
    }

    /// `max(0, x)`; the derivative at exactly zero is zero.
    pub fn relu(&self) -> Tensor<T> {
        self.unary(|input, out| Op::Relu { input, out }, |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(|input, out| Op::Tanh { input, out }, |x| x.tanh())
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(|input, out| Op::Sigmoid { input, out }, sigmoid_stable)
    }

    fn binary_elementwise(
        &self,
        rhs: &Tensor<T>,
        name: &'static str,
        op: fn(usize, usize, usize) -> Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>, AutodiffError> {
        self.same_tape(rhs);
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa != sb {
            return shape_err(name, format!("{sa:?} vs {sb:?}"));
        }
        let inner = self.inner.borrow();
        let out: Vec<T> = inner.values[self.node]
            .iter()
            .zip(&inner.values[rhs.node])
            .map(|(&x, &y)| f(x, y))
            .collect();
        let requires = inner.requires[self.node] || inner.requires[rhs.node];
        drop(inner);
        let (a, b) = (self.node, rhs.node);
        Ok(self.emit(sa, out, requires, |o| op(a, b, o)))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, AutodiffError> {
        self.binary_elementwise(rhs, "add", |a, b, out| Op::Add { a, b, out }, |x, y| x + y)
    }

    /// Elementwise (Hadamard) product of two same-shape tensors.
    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, AutodiffError> {
        self.binary_elementwise(rhs, "mul", |a, b, out| Op::Mul { a, b, out }, |x, y| x * y)
    }

    /// Sum of all elements, as a single-element tensor.
    pub fn sum(&self) -> Tensor<T> {
        let inner = self.inner.borrow();
        let total = inner.values[self.node].iter().fold(T::zero(), |acc, &x| acc + x);
        let requires = inner.requires[self.node];
        drop(inner);
        let i = self.node;
        self.emit(vec![1], vec![total], requires, |o| Op::Sum { input: i, out: o })
    }

    /// Multiplication by a compile-time-known constant.
    pub fn scale(&self, factor: T) -> Tensor<T> {
        let inner = self.inner.borrow();
        let out: Vec<T> = inner.values[self.node].iter().map(|&x| x * factor).collect();
        let shape = inner.shapes[self.node].clone();
        let requires = inner.requires[self.node];
        drop(inner);
        let i = self.node;
        self.emit(shape, out, requires, |o| Op::Scale { input: i, factor, out: o })
    }

    /// Same buffer under a new shape with equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor<T>, AutodiffError> {
        let inner = self.inner.borrow();
        let value = inner.values[self.node].clone();
        if shape.iter().product::<usize>() != value.len() {
            return shape_err("reshape", format!("{:?} -> {shape:?}", inner.shapes[self.node]));
        }
        let requires = inner.requires[self.node];
        drop(inner);
        let i = self.node;
        Ok(self.emit(shape, value, requires, |o| Op::Reshape { input: i, out: o }))
    }

    /// Collects columns of a `d×V` table into a `d×len(indices)` matrix.
    ///
    /// Slots holding `pad` produce all-zero columns and route no gradient
    /// back, so a padding column stays exactly as initialized.
    pub fn gather_cols(&self, indices: &[usize], pad: Option<usize>) -> Result<Tensor<T>, AutodiffError> {
        let s = self.shape();
        if s.len() != 2 {
            return shape_err("gather_cols", format!("table must be rank 2, got {s:?}"));
        }
        let (d, v) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return shape_err("gather_cols", format!("index {bad} out of range for {v} columns"));
        }
        let l = indices.len();
        let inner = self.inner.borrow();
        let table = &inner.values[self.node];
        let mut out = vec![T::zero(); d * l];
        for (j, &idx) in indices.iter().enumerate() {
            if Some(idx) == pad {
                continue;
            }
            for r in 0..d {
                out[r * l + j] = table[r * v + idx];
            }
        }
        let requires = inner.requires[self.node];
        drop(inner);
        let i = self.node;
        let indices = indices.to_vec();
        Ok(self.emit(vec![d, l], out, requires, |o| Op::GatherCols { table: i, indices, pad, out: o }))
    }

    /// Mean negative log-likelihood of `labels` under a softmax of the rows.
    ///
    /// `self` is `B×K` logits (a rank-1 tensor is one row); the row maximum
    /// is subtracted before exponentiation so large logits cannot overflow.
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Result<Tensor<T>, AutodiffError> {
        let s = self.shape();
        let (b, k) = match s.len() {
            1 => (1, s[0]),
            2 => (s[0], s[1]),
            _ => return shape_err("softmax_cross_entropy", format!("{s:?}")),
        };
        if k == 0 || b == 0 {
            return shape_err("softmax_cross_entropy", format!("{s:?}"));
        }
        if labels.len() != b {
            return shape_err(
                "softmax_cross_entropy",
                format!("{b} logit rows, {} labels", labels.len()),
            );
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(AutodiffError::LabelOutOfRange { label: bad, classes: k });
        }
        let inner = self.inner.borrow();
        let logits = &inner.values[self.node];
        let mut total = T::zero();
        for (row, &y) in labels.iter().enumerate() {
            let row = &logits[row * k..(row + 1) * k];
            total = total + nll_row(row, y);
        }
        let loss = total / T::from(b).unwrap();
        let requires = inner.requires[self.node];
        drop(inner);
        let i = self.node;
        let labels = labels.to_vec();
        Ok(self.emit(vec![1], vec![loss], requires, |o| Op::SoftmaxXent { logits: i, labels, out: o }))
    }

    /// Runs reverse-mode accumulation from this scalar. Leaf gradients add to
    /// whatever they already hold; intermediate gradients are rebuilt.
    pub fn backward(&self) -> Result<(), AutodiffError> {
        let mut inner = self.inner.borrow_mut();
        if inner.values[self.node].len() != 1 {
            return Err(AutodiffError::NonScalarLoss(inner.shapes[self.node].clone()));
        }
        if !inner.requires[self.node] {
            // Nothing upstream wants a gradient.
            return Ok(());
        }
        let n = inner.values.len();
        for i in 0..n {
            if !inner.leaf[i] {
                inner.grads[i].iter_mut().for_each(|x| *x = T::zero());
            }
        }
        inner.grads[self.node][0] = inner.grads[self.node][0] + T::one();
        let TapeInner { shapes, values, grads, requires, ops, .. } = &mut *inner;
        for op in ops.iter().rev() {
            apply_backward(op, shapes, values, grads, requires);
        }
        Ok(())
    }
}

/// Concatenates rank-1 tensors end to end.
pub fn concat<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>, AutodiffError> {
    if parts.is_empty() {
        return shape_err("concat", "no inputs".into());
    }
    let first = &parts[0];
    let mut value = Vec::new();
    let mut requires = false;
    for p in parts {
        first.same_tape(p);
        let s = p.shape();
        if s.len() != 1 {
            return shape_err("concat", format!("rank-1 inputs only, got {s:?}"));
        }
        let inner = first.inner.borrow();
        value.extend_from_slice(&inner.values[p.node]);
        requires |= inner.requires[p.node];
    }
    let nodes: Vec<usize> = parts.iter().map(|p| p.node).collect();
    let len = value.len();
    Ok(first.emit(vec![len], value, requires, |o| Op::Concat { parts: nodes, out: o }))
}

/// Stacks equal-length rank-1 tensors as the rows of a matrix.
pub fn stack_rows<T: Scalar>(rows: &[Tensor<T>]) -> Result<Tensor<T>, AutodiffError> {
    if rows.is_empty() {
        return shape_err("stack_rows", "no inputs".into());
    }
    let first = &rows[0];
    let k = first.shape();
    if k.len() != 1 {
        return shape_err("stack_rows", format!("rank-1 inputs only, got {k:?}"));
    }
    let k = k[0];
    let mut value = Vec::with_capacity(rows.len() * k);
    let mut requires = false;
    for r in rows {
        first.same_tape(r);
        let s = r.shape();
        if s != vec![k] {
            return shape_err("stack_rows", format!("rows must share shape [{k}], got {s:?}"));
        }
        let inner = first.inner.borrow();
        value.extend_from_slice(&inner.values[r.node]);
        requires |= inner.requires[r.node];
    }
    let nodes: Vec<usize> = rows.iter().map(|r| r.node).collect();
    let b = rows.len();
    Ok(first.emit(vec![b, k], value, requires, |o| Op::StackRows { rows: nodes, out: o }))
}

fn sigmoid_stable<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `−log softmax(row)[y]` via the max-subtraction log-sum-exp.
fn nll_row<T: Scalar>(row: &[T], y: usize) -> T {
    let max = row.iter().fold(row[0], |m, &x| if x > m { x } else { m });
    let lse = row.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp()).ln() + max;
    lse - row[y]
}

/// Softmax of one row with max subtraction.
fn softmax_row<T: Scalar>(row: &[T], out: &mut [T]) {
    let max = row.iter().fold(row[0], |m, &x| if x > m { x } else { m });
    let mut denom = T::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - max).exp();
        *o = e;
        denom = denom + e;
    }
    out.iter_mut().for_each(|o| *o = *o / denom);
}

fn apply_backward<T: Scalar>(
    op: &Op<T>,
    shapes: &[Vec<usize>],
    values: &[Vec<T>],
    grads: &mut [Vec<T>],
    requires: &[bool],
) {
    // Temporarily move the output gradient out so input buffers can be
    // written; every op's output node is distinct from its inputs.
    macro_rules! with_gout {
        ($out:expr, |$g:ident| $body:block) => {{
            if requires[$out] {
                let $g = std::mem::take(&mut grads[$out]);
                $body
                grads[$out] = $g;
            }
        }};
    }

    match op {
        Op::MatMul { a, b, out } => with_gout!(*out, |gout| {
            let (p, q) = (shapes[*a][0], shapes[*a][1]);
            let s = shapes[*b][1];
            if requires[*a] {
                for i in 0..p {
                    for k in 0..q {
                        let mut acc = T::zero();
                        for j in 0..s {
                            acc = acc + gout[i * s + j] * values[*b][k * s + j];
                        }
                        grads[*a][i * q + k] = grads[*a][i * q + k] + acc;
                    }
                }
            }
            if requires[*b] {
                for k in 0..q {
                    for j in 0..s {
                        let mut acc = T::zero();
                        for i in 0..p {
                            acc = acc + values[*a][i * q + k] * gout[i * s + j];
                        }
                        grads[*b][k * s + j] = grads[*b][k * s + j] + acc;
                    }
                }
            }
        }),
        Op::MatVec { a, x, out } => with_gout!(*out, |gout| {
            let (p, q) = (shapes[*a][0], shapes[*a][1]);
            if requires[*a] {
                for i in 0..p {
                    for k in 0..q {
                        grads[*a][i * q + k] = grads[*a][i * q + k] + gout[i] * values[*x][k];
                    }
                }
            }
            if requires[*x] {
                for i in 0..p {
                    for k in 0..q {
                        grads[*x][k] = grads[*x][k] + values[*a][i * q + k] * gout[i];
                    }
                }
            }
        }),
        Op::Conv1d { input, filter, bias, stride, out } => with_gout!(*out, |gout| {
            let (ch, t) = (shapes[*input][0], shapes[*input][1]);
            let (oc, w) = (shapes[*filter][0], shapes[*filter][2]);
            let tp = shapes[*out][1];
            for o in 0..oc {
                for j in 0..tp {
                    let g = gout[o * tp + j];
                    if g == T::zero() {
                        continue;
                    }
                    let start = j * stride;
                    if requires[*bias] {
                        grads[*bias][o] = grads[*bias][o] + g;
                    }
                    for c in 0..ch {
                        let in_row = c * t + start;
                        let f_row = (o * ch + c) * w;
                        for k in 0..w {
                            if requires[*filter] {
                                grads[*filter][f_row + k] =
                                    grads[*filter][f_row + k] + g * values[*input][in_row + k];
                            }
                            if requires[*input] {
                                grads[*input][in_row + k] =
                                    grads[*input][in_row + k] + g * values[*filter][f_row + k];
                            }
                        }
                    }
                }
            }
        }),
        Op::MaxPoolTime { input, out, argmax } => with_gout!(*out, |gout| {
            if requires[*input] {
                let t = shapes[*input][1];
                for (c, &j) in argmax.iter().enumerate() {
                    grads[*input][c * t + j] = grads[*input][c * t + j] + gout[c];
                }
            }
        }),
        Op::Relu { input, out } => with_gout!(*out, |gout| {
            if requires[*input] {
                for (i, &x) in values[*input].iter().enumerate() {
                    if x > T::zero() {
                        grads[*input][i] = grads[*input][i] + gout[i];
                    }
                }
            }
        }),
        Op::Tanh { input, out } => with_gout!(*out, |gout| {
            if requires[*input] {
                for (i, &y) in values[*out].iter().enumerate() {
                    grads[*input][i] = grads[*input][i] + gout[i] * (T::one() - y * y);
                }
            }
        }),
        Op::Sigmoid { input, out } => with_gout!(*out, |gout| {
            if requires[*input] {
                for (i, &y) in values[*out].iter().enumerate() {
                    grads[*input][i] = grads[*input][i] + gout[i] * y * (T::one() - y);
                }
            }
        }),
        Op::Add { a, b, out } => with_gout!(*out, |gout| {
            for (node, _) in [(*a, 0), (*b, 1)] {
                if requires[node] {
                    for (g, &go) in grads[node].iter_mut().zip(&gout) {
                        *g = *g + go;
                    }
                }
            }
        }),
        Op::Mul { a, b, out } => with_gout!(*out, |gout| {
            if requires[*a] {
                for i in 0..gout.len() {
                    grads[*a][i] = grads[*a][i] + gout[i] * values[*b][i];
                }
            }
            if requires[*b] {
                for i in 0..gout.len() {
                    grads[*b][i] = grads[*b][i] + gout[i] * values[*a][i];
                }
            }
        }),
        Op::Concat { parts, out } => with_gout!(*out, |gout| {
            let mut offset = 0;
            for &p in parts {
                let len = values[p].len();
                if requires[p] {
                    for i in 0..len {
                        grads[p][i] = grads[p][i] + gout[offset + i];
                    }
                }
                offset += len;
            }
        }),
        Op::StackRows { rows, out } => with_gout!(*out, |gout| {
            let k = shapes[*out][1];
            for (r, &node) in rows.iter().enumerate() {
                if requires[node] {
                    for i in 0..k {
                        grads[node][i] = grads[node][i] + gout[r * k + i];
                    }
                }
            }
        }),
        Op::GatherCols { table, indices, pad, out } => with_gout!(*out, |gout| {
            if requires[*table] {
                let v = shapes[*table][1];
                let d = shapes[*table][0];
                let l = indices.len();
                for (j, &idx) in indices.iter().enumerate() {
                    if Some(idx) == *pad {
                        continue;
                    }
                    for r in 0..d {
                        grads[*table][r * v + idx] = grads[*table][r * v + idx] + gout[r * l + j];
                    }
                }
            }
        }),
        Op::Reshape { input, out } => with_gout!(*out, |gout| {
            if requires[*input] {
                for (g, &go) in grads[*input].iter_mut().zip(&gout) {
                    *g = *g + go;
                }
            }
        }),
        Op::Sum { input, out } => with_gout!(*out, |gout| {
            if requires[*input] {
                let go = gout[0];
                for g in grads[*input].iter_mut() {
                    *g = *g + go;
                }
            }
        }),
        Op::Scale { input, factor, out } => with_gout!(*out, |gout| {
            if requires[*input] {
                for (g, &go) in grads[*input].iter_mut().zip(&gout) {
                    *g = *g + go * *factor;
                }
            }
        }),
        Op::SoftmaxXent { logits, labels, out } => with_gout!(*out, |gout| {
            if requires[*logits] {
                let k = *shapes[*logits].last().unwrap();
                let b = labels.len();
                let scale = gout[0] / T::from(b).unwrap();
                let mut probs = vec![T::zero(); k];
                for (row, &y) in labels.iter().enumerate() {
                    softmax_row(&values[*logits][row * k..(row + 1) * k], &mut probs);
                    for (i, &p) in probs.iter().enumerate() {
                        let indicator = if i == y { T::one() } else { T::zero() };
                        grads[*logits][row * k + i] =
                            grads[*logits][row * k + i] + scale * (p - indicator);
                    }
                }
            }
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorData;

    fn td(shape: &[usize], data: &[f64]) -> TensorData<f64> {
        TensorData::new(shape.to_vec(), data.to_vec())
    }

    #[test]
    fn matmul_matches_hand_product() {
        let tape = Tape::new();
        let a = tape.leaf(td(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let b = tape.leaf(td(&[2, 1], &[1.0, 1.0]), false);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.value(), td(&[2, 1], &[3.0, 7.0]));
        let i = tape.leaf(td(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), false);
        let ai = a.matmul(&i).unwrap();
        assert_eq!(ai.value(), a.value());
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dim() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(TensorData::zeros(vec![2, 3]), false);
        let b = tape.leaf(TensorData::zeros(vec![2, 2]), false);
        assert!(matches!(a.matmul(&b), Err(AutodiffError::Shape { .. })));
    }

    #[test]
    fn conv1d_stride_one_and_two() {
        let tape = Tape::new();
        let x = tape.leaf(td(&[1, 4], &[1.0, 2.0, 3.0, 4.0]), false);
        let f = tape.leaf(td(&[1, 1, 2], &[1.0, 1.0]), false);
        let b = tape.leaf(td(&[1], &[0.0]), false);
        assert_eq!(x.conv1d(&f, &b, 1).unwrap().value(), td(&[1, 3], &[3.0, 5.0, 7.0]));
        assert_eq!(x.conv1d(&f, &b, 2).unwrap().value(), td(&[1, 2], &[3.0, 7.0]));
    }

    #[test]
    fn conv1d_all_zero_input_passes_bias_through() {
        let tape = Tape::new();
        let x = tape.leaf(TensorData::zeros(vec![2, 5]), false);
        let f = tape.leaf(TensorData::zeros(vec![3, 2, 2]), false);
        let b = tape.leaf(td(&[3], &[0.5, -1.0, 2.0]), false);
        let y = x.conv1d(&f, &b, 1).unwrap().value();
        assert_eq!(y.shape(), &[3, 4]);
        for o in 0..3 {
            for j in 0..4 {
                assert_eq!(y.at2(o, j), [0.5, -1.0, 2.0][o]);
            }
        }
    }

    #[test]
    fn conv1d_rejects_window_longer_than_input() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(TensorData::zeros(vec![1, 2]), false);
        let f = tape.leaf(TensorData::zeros(vec![1, 1, 3]), false);
        let b = tape.leaf(TensorData::zeros(vec![1]), false);
        assert!(matches!(x.conv1d(&f, &b, 1), Err(AutodiffError::Shape { .. })));
    }

    #[test]
    fn maxpool_takes_first_maximum_on_ties() {
        let tape = Tape::new();
        let x = tape.leaf(td(&[1, 3], &[1.0, 5.0, 3.0]), true);
        let y = x.maxpool_over_time().unwrap();
        assert_eq!(y.value(), td(&[1], &[5.0]));
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.0, 1.0, 0.0]);

        let tape = Tape::new();
        let x = tape.leaf(td(&[1, 2], &[2.0, 2.0]), true);
        let y = x.maxpool_over_time().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn singleton_window_pool_is_identity() {
        let tape = Tape::new();
        let x = tape.leaf(td(&[3, 1], &[1.0, -2.0, 0.5]), false);
        assert_eq!(x.maxpool_over_time().unwrap().value(), td(&[3], &[1.0, -2.0, 0.5]));
    }

    #[test]
    fn pointwise_values() {
        let tape = Tape::new();
        let x = tape.leaf(td(&[3], &[-3.0, 0.0, 2.0]), false);
        assert_eq!(x.relu().value().data(), &[0.0, 0.0, 2.0]);
        let z = tape.leaf(td(&[1], &[0.0]), false);
        assert_eq!(z.sigmoid().value().data(), &[0.5]);
        let big = tape.leaf(td(&[2], &[-100.0, 100.0]), false);
        let s = big.sigmoid().value();
        assert!(s.data()[0] > 0.0 && s.data()[0] < 1e-40);
        assert!((s.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn concat_joins_in_argument_order() {
        let tape = Tape::new();
        let a = tape.leaf(td(&[2], &[1.0, 2.0]), false);
        let b = tape.leaf(td(&[1], &[3.0]), false);
        let c = concat(&[a, b]).unwrap();
        assert_eq!(c.value(), td(&[3], &[1.0, 2.0, 3.0]));
    }

    #[test]
    fn softmax_xent_uniform_and_saturated() {
        let tape = Tape::new();
        let even = tape.leaf(td(&[2], &[0.0, 0.0]), false);
        let loss = even.softmax_cross_entropy(&[0]).unwrap().value().item();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);

        // Extreme logits must not overflow thanks to max subtraction.
        let hot = tape.leaf(td(&[2], &[1000.0, 0.0]), false);
        let loss = hot.softmax_cross_entropy(&[0]).unwrap().value().item();
        assert!(loss.is_finite() && loss < 1e-12);
    }

    #[test]
    fn softmax_xent_batch_is_mean_of_rows() {
        let tape = Tape::new();
        let one = tape.leaf(td(&[2], &[0.3, -0.7]), false);
        let two = tape.leaf(td(&[2], &[1.5, 0.2]), false);
        let l1 = one.softmax_cross_entropy(&[1]).unwrap().value().item();
        let l2 = two.softmax_cross_entropy(&[0]).unwrap().value().item();
        let both = stack_rows(&[one, two]).unwrap();
        let l = both.softmax_cross_entropy(&[1, 0]).unwrap().value().item();
        assert!((l - (l1 + l2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_xent_rejects_out_of_range_label() {
        let tape = Tape::new();
        let x = tape.leaf(td(&[2], &[0.0, 0.0]), false);
        assert!(matches!(
            x.softmax_cross_entropy(&[2]),
            Err(AutodiffError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(td(&[3], &[1.0, -2.0, 5.0]), true);
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares_is_twice_input() {
        let tape = Tape::new();
        let x = tape.leaf(td(&[3], &[1.0, -2.0, 5.0]), true);
        x.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, -4.0, 10.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(td(&[2], &[1.0, 2.0]), true);
        assert!(matches!(x.backward(), Err(AutodiffError::NonScalarLoss(_))));
    }

    #[test]
    fn repeated_backward_accumulates_until_reset() {
        let tape = Tape::new();
        let x = tape.leaf(td(&[2], &[1.0, 2.0]), true);
        let loss = x.sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 2.0]);
        tape.zero_grads();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn scaling_the_loss_scales_the_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(td(&[2], &[0.4, -1.1]), true);
        x.mul(&x).unwrap().sum().scale(2.5).backward().unwrap();
        let g = x.grad().unwrap();
        assert!((g.data()[0] - 2.5 * 0.8).abs() < 1e-12);
        assert!((g.data()[1] - 2.5 * -2.2).abs() < 1e-12);
    }

    #[test]
    fn gather_pads_to_zero_and_skips_pad_gradient() {
        let tape = Tape::new();
        let q = tape.leaf(td(&[2, 3], &[9.0, 1.0, 2.0, 9.0, 3.0, 4.0]), true);
        let g = q.gather_cols(&[1, 0, 2], Some(0)).unwrap();
        assert_eq!(g.value(), td(&[2, 3], &[1.0, 0.0, 2.0, 3.0, 0.0, 4.0]));
        g.sum().backward().unwrap();
        // Column 0 holds the pad: no gradient despite being gathered.
        assert_eq!(q.grad().unwrap().data(), &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn gather_repeated_index_accumulates() {
        let tape = Tape::new();
        let q = tape.leaf(td(&[1, 2], &[5.0, 7.0]), true);
        let g = q.gather_cols(&[1, 1], None).unwrap();
        assert_eq!(g.value(), td(&[1, 2], &[7.0, 7.0]));
        g.sum().backward().unwrap();
        assert_eq!(q.grad().unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn constants_never_hold_gradients() {
        let tape = Tape::new();
        let x = tape.leaf(td(&[2], &[1.0, 2.0]), true);
        let c = tape.constant(td(&[2], &[10.0, 20.0]));
        let y = x.mul(&c).unwrap().sum();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[10.0, 20.0]);
        assert!(c.grad().is_none());
    }

    #[test]
    fn forward_is_bit_identical_across_runs() {
        let run = || {
            let tape = Tape::new();
            let x = tape.leaf(td(&[4], &[0.1, -0.2, 0.3, -0.4]), true);
            let y = x.tanh().mul(&x.sigmoid()).unwrap().sum();
            y.backward().unwrap();
            (y.value().item().to_bits(), x.grad().unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }

    #[test]
    #[should_panic(expected = "share a tape")]
    fn cross_tape_use_panics() {
        let t1 = Tape::<f64>::new();
        let t2 = Tape::<f64>::new();
        let a = t1.leaf(TensorData::zeros(vec![2]), false);
        let b = t2.leaf(TensorData::zeros(vec![2]), false);
        let _ = a.add(&b);
    }
}
