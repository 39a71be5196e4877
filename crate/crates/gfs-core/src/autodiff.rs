//! Minimal reverse-mode differentiation over dense matrices.
//!
//! Define-by-run: every operation eagerly computes its value and records its
//! parents, forming a DAG of reference-counted nodes. [`Value::backward`] on
//! a 1×1 loss walks the graph in reverse topological order and accumulates
//! vector–Jacobian products into each trainable leaf. Gradients accumulate
//! across calls until explicitly zeroed; forward evaluation never mutates
//! parameters.
//!
//! The op set covers exactly what the consequent units and the loss need:
//! dense and sparse-dense matmul, broadcast add, elementwise arithmetic,
//! rectifiers, exp/log/sqrt, (masked) row softmax, segment sum, reductions
//! and row slicing. Shape mismatches panic — they are programming errors,
//! not runtime conditions.

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use ndarray::{Array2, Axis};

use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

enum Op<T: Scalar> {
    Leaf,
    MatMul(Value<T>, Value<T>),
    SparseMatMul(Rc<CsrMatrix<T>>, Value<T>),
    Add(Value<T>, Value<T>),
    AddRowBroadcast(Value<T>, Value<T>),
    ElementwiseMul(Value<T>, Value<T>),
    Relu(Value<T>),
    LeakyRelu(Value<T>, T),
    Exp(Value<T>),
    Log(Value<T>),
    /// `ln(max(x, eps))`; gradient is zero where the clamp engaged.
    LogClamped(Value<T>, T),
    Sqrt(Value<T>),
    RowSoftmax(Value<T>),
    RowLogSoftmax(Value<T>),
    MaskedRowSoftmax(Value<T>, Rc<Array2<bool>>),
    SegmentSum(Value<T>, Rc<Vec<usize>>),
    Sum(Value<T>),
    Scale(Value<T>, T),
    FrobeniusNormSq(Value<T>),
    Transpose(Value<T>),
    SliceRows(Value<T>, usize),
}

struct Node<T: Scalar> {
    data: RefCell<Array2<T>>,
    grad: RefCell<Array2<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// A matrix in the computation graph.
#[derive(Clone)]
pub struct Value<T: Scalar>(Rc<Node<T>>);

/// A named trainable leaf.
#[derive(Clone)]
pub struct Parameter<T: Scalar> {
    name: String,
    value: Value<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, data: Array2<T>) -> Self {
        let grad = Array2::zeros(data.dim());
        Self {
            name: name.into(),
            value: Value(Rc::new(Node {
                data: RefCell::new(data),
                grad: RefCell::new(grad),
                requires_grad: true,
                op: Op::Leaf,
            })),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Value<T> {
        &self.value
    }

    pub fn data(&self) -> Ref<'_, Array2<T>> {
        self.value.data()
    }

    pub fn grad(&self) -> Ref<'_, Array2<T>> {
        self.value.0.grad.borrow()
    }

    /// Replaces the parameter's contents (optimizer step, checkpoint load).
    pub fn set_data(&self, data: Array2<T>) {
        assert_eq!(data.dim(), self.value.dim(), "parameter shape is fixed");
        *self.value.0.data.borrow_mut() = data;
    }

    pub fn zero_grad(&self) {
        self.value.0.grad.borrow_mut().fill(T::zero());
    }
}

impl<T: Scalar> Value<T> {
    fn new(data: Array2<T>, requires_grad: bool, op: Op<T>) -> Self {
        let grad = Array2::zeros(data.dim());
        Value(Rc::new(Node {
            data: RefCell::new(data),
            grad: RefCell::new(grad),
            requires_grad,
            op,
        }))
    }

    /// A constant: part of the graph but receives no gradient.
    pub fn constant(data: Array2<T>) -> Self {
        Self::new(data, false, Op::Leaf)
    }

    pub fn data(&self) -> Ref<'_, Array2<T>> {
        self.0.data.borrow()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.data.borrow().dim()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// The single entry of a 1×1 value.
    pub fn scalar(&self) -> T {
        let data = self.data();
        assert_eq!(data.dim(), (1, 1), "scalar() requires a 1×1 value");
        data[[0, 0]]
    }

    fn unary(&self, data: Array2<T>, op: Op<T>) -> Value<T> {
        Value::new(data, self.0.requires_grad, op)
    }

    pub fn matmul(&self, rhs: &Value<T>) -> Value<T> {
        let (a, b) = (self.data(), rhs.data());
        assert_eq!(a.ncols(), b.nrows(), "matmul shape mismatch");
        let out = a.dot(&*b);
        drop((a, b));
        Value::new(
            out,
            self.0.requires_grad || rhs.0.requires_grad,
            Op::MatMul(self.clone(), rhs.clone()),
        )
    }

    /// `sparse · dense`, with the sparse factor held constant.
    pub fn sparse_matmul(sparse: &Rc<CsrMatrix<T>>, dense: &Value<T>) -> Value<T> {
        let out = sparse.mul_dense(&dense.data());
        Value::new(
            out,
            dense.0.requires_grad,
            Op::SparseMatMul(Rc::clone(sparse), dense.clone()),
        )
    }

    pub fn add(&self, rhs: &Value<T>) -> Value<T> {
        let (a, b) = (self.data(), rhs.data());
        assert_eq!(a.dim(), b.dim(), "add shape mismatch");
        let out = &*a + &*b;
        drop((a, b));
        Value::new(
            out,
            self.0.requires_grad || rhs.0.requires_grad,
            Op::Add(self.clone(), rhs.clone()),
        )
    }

    /// Adds a 1×m row vector to every row of an n×m matrix.
    pub fn add_row_broadcast(&self, row: &Value<T>) -> Value<T> {
        let (a, r) = (self.data(), row.data());
        assert_eq!(r.nrows(), 1, "broadcast operand must be a single row");
        assert_eq!(a.ncols(), r.ncols(), "broadcast width mismatch");
        let out = &*a + &r.row(0);
        drop((a, r));
        Value::new(
            out,
            self.0.requires_grad || row.0.requires_grad,
            Op::AddRowBroadcast(self.clone(), row.clone()),
        )
    }

    pub fn elementwise_mul(&self, rhs: &Value<T>) -> Value<T> {
        let (a, b) = (self.data(), rhs.data());
        assert_eq!(a.dim(), b.dim(), "elementwise mul shape mismatch");
        let out = &*a * &*b;
        drop((a, b));
        Value::new(
            out,
            self.0.requires_grad || rhs.0.requires_grad,
            Op::ElementwiseMul(self.clone(), rhs.clone()),
        )
    }

    pub fn relu(&self) -> Value<T> {
        let out = self
            .data()
            .mapv(|x| if x > T::zero() { x } else { T::zero() });
        self.unary(out, Op::Relu(self.clone()))
    }

    pub fn leaky_relu(&self, slope: T) -> Value<T> {
        let out = self
            .data()
            .mapv(|x| if x > T::zero() { x } else { slope * x });
        self.unary(out, Op::LeakyRelu(self.clone(), slope))
    }

    pub fn exp(&self) -> Value<T> {
        let out = self.data().mapv(|x| x.exp());
        self.unary(out, Op::Exp(self.clone()))
    }

    pub fn log(&self) -> Value<T> {
        let out = self.data().mapv(|x| x.ln());
        self.unary(out, Op::Log(self.clone()))
    }

    pub fn log_clamped(&self, eps: T) -> Value<T> {
        assert!(eps > T::zero());
        let out = self.data().mapv(|x| x.max(eps).ln());
        self.unary(out, Op::LogClamped(self.clone(), eps))
    }

    pub fn sqrt(&self) -> Value<T> {
        let out = self.data().mapv(|x| x.sqrt());
        self.unary(out, Op::Sqrt(self.clone()))
    }

    pub fn row_softmax(&self) -> Value<T> {
        let data = self.data();
        let mut out = Array2::zeros(data.dim());
        for (i, row) in data.rows().into_iter().enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for (j, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                out[[i, j]] = e;
                denom += e;
            }
            for j in 0..row.len() {
                out[[i, j]] /= denom;
            }
        }
        drop(data);
        self.unary(out, Op::RowSoftmax(self.clone()))
    }

    /// Log-probabilities `x - logsumexp(x)` per row. Finite for any finite
    /// input, unlike `log(row_softmax(x))` whose probabilities underflow.
    pub fn row_log_softmax(&self) -> Value<T> {
        let data = self.data();
        let mut out = Array2::zeros(data.dim());
        for (i, row) in data.rows().into_iter().enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for &x in row.iter() {
                denom += (x - max).exp();
            }
            let lse = max + denom.ln();
            for (j, &x) in row.iter().enumerate() {
                out[[i, j]] = x - lse;
            }
        }
        drop(data);
        self.unary(out, Op::RowLogSoftmax(self.clone()))
    }

    /// Softmax within the `true` entries of each row; masked-out entries get
    /// probability zero. Panics on a row with an empty mask — that is an
    /// upstream modeling bug (a node with no neighbor and no self-loop).
    pub fn masked_row_softmax(&self, mask: &Rc<Array2<bool>>) -> Value<T> {
        let data = self.data();
        assert_eq!(data.dim(), mask.dim(), "mask shape mismatch");
        let mut out = Array2::zeros(data.dim());
        for i in 0..data.nrows() {
            let mut max = T::neg_infinity();
            let mut any = false;
            for j in 0..data.ncols() {
                if mask[[i, j]] {
                    any = true;
                    max = max.max(data[[i, j]]);
                }
            }
            assert!(any, "empty mask row {i} in masked softmax");
            let mut denom = T::zero();
            for j in 0..data.ncols() {
                if mask[[i, j]] {
                    let e = (data[[i, j]] - max).exp();
                    out[[i, j]] = e;
                    denom += e;
                }
            }
            for j in 0..data.ncols() {
                if mask[[i, j]] {
                    out[[i, j]] /= denom;
                }
            }
        }
        drop(data);
        self.unary(out, Op::MaskedRowSoftmax(self.clone(), Rc::clone(mask)))
    }

    /// Sums rows into segments: output row `s` is the sum of input rows `v`
    /// with `segments[v] == s`. Segment count is `max(segments) + 1`.
    pub fn segment_sum(&self, segments: &Rc<Vec<usize>>) -> Value<T> {
        let data = self.data();
        assert_eq!(
            data.nrows(),
            segments.len(),
            "segment index length mismatch"
        );
        let num_segments = segments.iter().copied().max().map_or(0, |m| m + 1);
        let mut out = Array2::zeros((num_segments, data.ncols()));
        for (v, &s) in segments.iter().enumerate() {
            for j in 0..data.ncols() {
                out[[s, j]] += data[[v, j]];
            }
        }
        drop(data);
        self.unary(out, Op::SegmentSum(self.clone(), Rc::clone(segments)))
    }

    /// Sum of all entries, as a 1×1 value.
    pub fn sum(&self) -> Value<T> {
        let total = self.data().iter().copied().fold(T::zero(), |a, b| a + b);
        self.unary(Array2::from_elem((1, 1), total), Op::Sum(self.clone()))
    }

    pub fn scale(&self, factor: T) -> Value<T> {
        let out = self.data().mapv(|x| x * factor);
        self.unary(out, Op::Scale(self.clone(), factor))
    }

    /// Sum of squared entries, as a 1×1 value.
    pub fn frobenius_norm_sq(&self) -> Value<T> {
        let total = self
            .data()
            .iter()
            .map(|&x| x * x)
            .fold(T::zero(), |a, b| a + b);
        self.unary(
            Array2::from_elem((1, 1), total),
            Op::FrobeniusNormSq(self.clone()),
        )
    }

    pub fn transpose(&self) -> Value<T> {
        let out = self.data().t().to_owned();
        self.unary(out, Op::Transpose(self.clone()))
    }

    /// Rows `start..start + len` as a new value.
    pub fn slice_rows(&self, start: usize, len: usize) -> Value<T> {
        let data = self.data();
        assert!(start + len <= data.nrows(), "row slice out of range");
        let out = data.slice(ndarray::s![start..start + len, ..]).to_owned();
        drop(data);
        self.unary(out, Op::SliceRows(self.clone(), start))
    }

    /// Reverse pass from a 1×1 loss: accumulates `d loss / d leaf` into the
    /// `grad` buffer of every reachable trainable leaf. Repeated calls
    /// without zeroing accumulate. The graph is a DAG by construction (nodes
    /// only ever reference pre-existing parents), so the traversal
    /// terminates.
    pub fn backward(&self) {
        assert_eq!(self.dim(), (1, 1), "backward requires a 1×1 loss");
        let order = self.topo_order();
        *self.0.grad.borrow_mut() = Array2::from_elem((1, 1), T::one());
        for node in order.iter().rev() {
            node.propagate();
        }
        // Interior gradients are scratch space; reset them so a later
        // backward through a shared subgraph starts clean.
        for node in order.iter() {
            if !matches!(node.0.op, Op::Leaf) {
                node.0.grad.borrow_mut().fill(T::zero());
            }
        }
    }

    fn topo_order(&self) -> Vec<Value<T>> {
        fn visit<T: Scalar>(
            value: &Value<T>,
            seen: &mut HashSet<*const Node<T>>,
            out: &mut Vec<Value<T>>,
        ) {
            let ptr = Rc::as_ptr(&value.0);
            if !value.0.requires_grad || !seen.insert(ptr) {
                return;
            }
            match &value.0.op {
                Op::Leaf => {}
                Op::MatMul(a, b)
                | Op::Add(a, b)
                | Op::AddRowBroadcast(a, b)
                | Op::ElementwiseMul(a, b) => {
                    visit(a, seen, out);
                    visit(b, seen, out);
                }
                Op::SparseMatMul(_, a)
                | Op::Relu(a)
                | Op::LeakyRelu(a, _)
                | Op::Exp(a)
                | Op::Log(a)
                | Op::LogClamped(a, _)
                | Op::Sqrt(a)
                | Op::RowSoftmax(a)
                | Op::RowLogSoftmax(a)
                | Op::MaskedRowSoftmax(a, _)
                | Op::SegmentSum(a, _)
                | Op::Sum(a)
                | Op::Scale(a, _)
                | Op::FrobeniusNormSq(a)
                | Op::Transpose(a)
                | Op::SliceRows(a, _) => visit(a, seen, out),
            }
            out.push(value.clone());
        }
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        visit(self, &mut seen, &mut out);
        out
    }

    fn add_grad(target: &Value<T>, contribution: &Array2<T>) {
        if !target.0.requires_grad {
            return;
        }
        let mut grad = target.0.grad.borrow_mut();
        *grad = &*grad + contribution;
    }

    /// Applies this node's vector–Jacobian product to its parents.
    fn propagate(&self) {
        let grad = self.0.grad.borrow().clone();
        match &self.0.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if a.0.requires_grad {
                    let ga = grad.dot(&b.data().t());
                    Self::add_grad(a, &ga);
                }
                if b.0.requires_grad {
                    let gb = a.data().t().dot(&grad);
                    Self::add_grad(b, &gb);
                }
            }
            Op::SparseMatMul(sparse, dense) => {
                if dense.0.requires_grad {
                    Self::add_grad(dense, &sparse.transpose_mul_dense(&grad));
                }
            }
            Op::Add(a, b) => {
                Self::add_grad(a, &grad);
                Self::add_grad(b, &grad);
            }
            Op::AddRowBroadcast(a, row) => {
                Self::add_grad(a, &grad);
                if row.0.requires_grad {
                    let col_sum = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                    Self::add_grad(row, &col_sum);
                }
            }
            Op::ElementwiseMul(a, b) => {
                if a.0.requires_grad {
                    Self::add_grad(a, &(&grad * &*b.data()));
                }
                if b.0.requires_grad {
                    Self::add_grad(b, &(&grad * &*a.data()));
                }
            }
            Op::Relu(a) => {
                let data = a.data();
                let masked = Array2::from_shape_fn(grad.dim(), |idx| {
                    if data[idx] > T::zero() {
                        grad[idx]
                    } else {
                        T::zero()
                    }
                });
                drop(data);
                Self::add_grad(a, &masked);
            }
            Op::LeakyRelu(a, slope) => {
                let data = a.data();
                let masked = Array2::from_shape_fn(grad.dim(), |idx| {
                    if data[idx] > T::zero() {
                        grad[idx]
                    } else {
                        grad[idx] * *slope
                    }
                });
                drop(data);
                Self::add_grad(a, &masked);
            }
            Op::Exp(a) => {
                let out = self.0.data.borrow();
                Self::add_grad(a, &(&grad * &*out));
            }
            Op::Log(a) => {
                let data = a.data();
                let scaled = Array2::from_shape_fn(grad.dim(), |idx| grad[idx] / data[idx]);
                drop(data);
                Self::add_grad(a, &scaled);
            }
            Op::LogClamped(a, eps) => {
                let data = a.data();
                let scaled = Array2::from_shape_fn(grad.dim(), |idx| {
                    if data[idx] > *eps {
                        grad[idx] / data[idx]
                    } else {
                        T::zero()
                    }
                });
                drop(data);
                Self::add_grad(a, &scaled);
            }
            Op::Sqrt(a) => {
                let out = self.0.data.borrow();
                let half = T::of(0.5);
                let scaled = Array2::from_shape_fn(grad.dim(), |idx| grad[idx] * half / out[idx]);
                drop(out);
                Self::add_grad(a, &scaled);
            }
            Op::RowSoftmax(a) => {
                let y = self.0.data.borrow();
                let mut gx = Array2::zeros(grad.dim());
                for i in 0..grad.nrows() {
                    let mut dot = T::zero();
                    for j in 0..grad.ncols() {
                        dot += grad[[i, j]] * y[[i, j]];
                    }
                    for j in 0..grad.ncols() {
                        gx[[i, j]] = y[[i, j]] * (grad[[i, j]] - dot);
                    }
                }
                drop(y);
                Self::add_grad(a, &gx);
            }
            Op::RowLogSoftmax(a) => {
                // out = x - lse(x); VJP: gx = g - softmax(x) · rowsum(g).
                let logp = self.0.data.borrow();
                let mut gx = Array2::zeros(grad.dim());
                for i in 0..grad.nrows() {
                    let mut row_sum = T::zero();
                    for j in 0..grad.ncols() {
                        row_sum += grad[[i, j]];
                    }
                    for j in 0..grad.ncols() {
                        gx[[i, j]] = grad[[i, j]] - logp[[i, j]].exp() * row_sum;
                    }
                }
                drop(logp);
                Self::add_grad(a, &gx);
            }
            Op::MaskedRowSoftmax(a, mask) => {
                let y = self.0.data.borrow();
                let mut gx = Array2::zeros(grad.dim());
                for i in 0..grad.nrows() {
                    let mut dot = T::zero();
                    for j in 0..grad.ncols() {
                        if mask[[i, j]] {
                            dot += grad[[i, j]] * y[[i, j]];
                        }
                    }
                    for j in 0..grad.ncols() {
                        if mask[[i, j]] {
                            gx[[i, j]] = y[[i, j]] * (grad[[i, j]] - dot);
                        }
                    }
                }
                drop(y);
                Self::add_grad(a, &gx);
            }
            Op::SegmentSum(a, segments) => {
                let mut gx = Array2::zeros(a.dim());
                for (v, &s) in segments.iter().enumerate() {
                    for j in 0..grad.ncols() {
                        gx[[v, j]] = grad[[s, j]];
                    }
                }
                Self::add_grad(a, &gx);
            }
            Op::Sum(a) => {
                let g = grad[[0, 0]];
                Self::add_grad(a, &Array2::from_elem(a.dim(), g));
            }
            Op::Scale(a, factor) => {
                Self::add_grad(a, &grad.mapv(|g| g * *factor));
            }
            Op::FrobeniusNormSq(a) => {
                let g = grad[[0, 0]];
                let two = T::of(2.0);
                let gx = a.data().mapv(|x| two * g * x);
                Self::add_grad(a, &gx);
            }
            Op::Transpose(a) => {
                Self::add_grad(a, &grad.t().to_owned());
            }
            Op::SliceRows(a, start) => {
                let mut gx = Array2::zeros(a.dim());
                for i in 0..grad.nrows() {
                    for j in 0..grad.ncols() {
                        gx[[*start + i, j]] = grad[[i, j]];
                    }
                }
                Self::add_grad(a, &gx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>() * 2.0 - 1.0)
    }

    /// Central finite differences on every entry of every parameter,
    /// compared against the analytic gradient of `f`.
    fn grad_check(params: &[&Parameter<f64>], f: impl Fn() -> Value<f64>, label: &str) {
        for p in params {
            p.zero_grad();
        }
        let loss = f();
        loss.backward();
        let analytic: Vec<Array2<f64>> = params.iter().map(|p| p.grad().clone()).collect();
        let h = 1e-5;
        for (pi, p) in params.iter().enumerate() {
            let original = p.data().clone();
            for idx in 0..original.len() {
                let (r, c) = (idx / original.ncols(), idx % original.ncols());
                let mut plus = original.clone();
                plus[[r, c]] += h;
                p.set_data(plus);
                let f_plus = f().scalar();
                let mut minus = original.clone();
                minus[[r, c]] -= h;
                p.set_data(minus);
                let f_minus = f().scalar();
                p.set_data(original.clone());
                let fd = (f_plus - f_minus) / (2.0 * h);
                let an = analytic[pi][[r, c]];
                let denom = an.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (an - fd).abs() / denom < 1e-4,
                    "{label}: param {pi} entry ({r},{c}): analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn matmul_identity_is_identity() {
        let x = Value::constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let eye = Value::constant(Array2::eye(2));
        assert_eq!(*x.matmul(&eye).data(), *x.data());
    }

    #[test]
    fn row_softmax_of_constant_row_is_uniform() {
        let x = Value::<f64>::constant(array![[3.0, 3.0, 3.0, 3.0]]);
        let y = x.row_softmax();
        for &v in y.data().iter() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn segment_sum_two_segments() {
        let x = Value::constant(array![[1.0, 2.0], [10.0, 20.0], [100.0, 200.0]]);
        let idx = Rc::new(vec![0usize, 0, 1]);
        let y = x.segment_sum(&idx);
        assert_eq!(*y.data(), array![[11.0, 22.0], [100.0, 200.0]]);
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let w = Parameter::new("w", array![[1.0, -2.0], [0.5, 3.0]]);
        let loss = w.value().sum();
        loss.backward();
        assert_eq!(*w.grad(), Array2::from_elem((2, 2), 1.0));
    }

    #[test]
    fn frobenius_gradient_is_two_w() {
        let w = Parameter::new("w", array![[1.0, -2.0], [0.5, 3.0]]);
        let loss = w.value().frobenius_norm_sq();
        loss.backward();
        assert_eq!(*w.grad(), w.data().mapv(|x| 2.0 * x));
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let w = Parameter::<f64>::new("w", array![[2.0]]);
        w.value().sum().backward();
        w.value().sum().backward();
        assert_eq!(w.grad()[[0, 0]], 2.0);
        w.zero_grad();
        assert_eq!(w.grad()[[0, 0]], 0.0);
    }

    #[test]
    fn forward_never_mutates_parameters() {
        let w = Parameter::new("w", array![[1.0, 2.0]]);
        let before = w.data().clone();
        let loss = w.value().relu().exp().sum();
        loss.backward();
        assert_eq!(*w.data(), before);
    }

    #[test]
    fn linearity_of_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Parameter::new("w", randn(&mut rng, 3, 2));
        let x = Value::constant(randn(&mut rng, 3, 2));
        let (alpha, beta) = (2.5, -1.25);

        let f = || w.value().elementwise_mul(&x).sum();
        let g = || w.value().frobenius_norm_sq();

        w.zero_grad();
        f().backward();
        let grad_f = w.grad().clone();
        w.zero_grad();
        g().backward();
        let grad_g = w.grad().clone();
        w.zero_grad();
        f().scale(alpha).add(&g().scale(beta)).backward();
        let combined = w.grad().clone();
        for idx in 0..combined.len() {
            let (r, c) = (idx / 2, idx % 2);
            let expected = alpha * grad_f[[r, c]] + beta * grad_g[[r, c]];
            assert!((combined[[r, c]] - expected).abs() < 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "matmul shape mismatch")]
    fn matmul_rejects_bad_shapes() {
        let a = Value::<f64>::constant(Array2::zeros((2, 3)));
        let b = Value::<f64>::constant(Array2::zeros((2, 3)));
        let _ = a.matmul(&b);
    }

    #[test]
    #[should_panic(expected = "empty mask row")]
    fn masked_softmax_rejects_empty_row() {
        let x = Value::<f64>::constant(Array2::zeros((2, 2)));
        let mask = Rc::new(array![[true, true], [false, false]]);
        let _ = x.masked_row_softmax(&mask);
    }

    #[test]
    fn finite_difference_check_every_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _trial in 0..10 {
            let w = Parameter::new("w", randn(&mut rng, 3, 3));
            let u = Parameter::new("u", randn(&mut rng, 3, 3));
            let row = Parameter::new("row", randn(&mut rng, 1, 3));
            let x = Value::constant(randn(&mut rng, 3, 3));
            let sparse = Rc::new(CsrMatrix::from_triplets(
                3,
                3,
                &[(0, 0, 1.0), (0, 2, 0.5), (1, 1, 2.0), (2, 0, -1.0)],
            ));
            let mask = Rc::new(array![
                [true, true, false],
                [false, true, true],
                [true, true, true]
            ]);
            let segments = Rc::new(vec![0usize, 0, 1]);

            grad_check(
                &[&w, &u],
                || w.value().matmul(&u.value().transpose()).frobenius_norm_sq(),
                "matmul+transpose",
            );
            grad_check(
                &[&w],
                || Value::sparse_matmul(&sparse, w.value()).frobenius_norm_sq(),
                "sparse_matmul",
            );
            grad_check(
                &[&w, &row],
                || w.value().add_row_broadcast(row.value()).relu().sum(),
                "add_row_broadcast+relu",
            );
            grad_check(
                &[&w, &u],
                || w.value().add(u.value()).elementwise_mul(&x).sum(),
                "add+elementwise_mul",
            );
            grad_check(
                &[&w],
                || w.value().leaky_relu(0.2).frobenius_norm_sq(),
                "leaky_relu",
            );
            grad_check(&[&w], || w.value().exp().sum(), "exp");
            // exp keeps the log argument strictly positive and well away
            // from zero, where finite differences degrade.
            grad_check(
                &[&w],
                || w.value().exp().add(&x.elementwise_mul(&x)).log().sum(),
                "log",
            );
            grad_check(
                &[&w],
                || w.value().exp().log_clamped(1e-12).sum(),
                "log_clamped",
            );
            grad_check(
                &[&w],
                || w.value().frobenius_norm_sq().sqrt(),
                "sqrt-of-norm",
            );
            grad_check(
                &[&w],
                || w.value().row_softmax().elementwise_mul(&x).sum(),
                "row_softmax",
            );
            grad_check(
                &[&w],
                || w.value().row_log_softmax().elementwise_mul(&x).sum(),
                "row_log_softmax",
            );
            grad_check(
                &[&w],
                || {
                    w.value()
                        .masked_row_softmax(&mask)
                        .elementwise_mul(&x)
                        .sum()
                },
                "masked_row_softmax",
            );
            grad_check(
                &[&w],
                || w.value().segment_sum(&segments).frobenius_norm_sq(),
                "segment_sum",
            );
            grad_check(&[&w], || w.value().scale(-1.75).sum(), "scale");
            grad_check(
                &[&w],
                || w.value().slice_rows(1, 2).frobenius_norm_sq(),
                "slice_rows",
            );
        }
    }

    #[test]
    fn row_log_softmax_matches_log_of_softmax() {
        let x = Value::<f64>::constant(array![[1.5, -0.25, 0.0], [10.0, -3.0, 2.5]]);
        let direct = x.row_log_softmax();
        let composed = x.row_softmax().log();
        for (a, b) in direct.data().iter().zip(composed.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Stays finite where the composed form underflows.
        let extreme = Value::<f64>::constant(array![[0.0, 2000.0]]);
        let logp = extreme.row_log_softmax();
        assert_eq!(logp.data()[[0, 0]], -2000.0);
        assert_eq!(logp.data()[[0, 1]], 0.0);
    }

    #[test]
    fn log_clamped_zeroes_gradient_below_eps() {
        let w = Parameter::<f64>::new("w", array![[1e-20, 0.5]]);
        w.value().log_clamped(1e-12).sum().backward();
        assert_eq!(w.grad()[[0, 0]], 0.0);
        assert!((w.grad()[[0, 1]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn diamond_graph_accumulates_both_paths() {
        // loss = sum(w ⊙ w) via two references to the same node.
        let w = Parameter::<f64>::new("w", array![[3.0]]);
        let y = w.value().elementwise_mul(w.value());
        y.sum().backward();
        assert!((w.grad()[[0, 0]] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn shared_subgraph_reused_across_backwards_stays_correct() {
        // Interior scratch gradients must reset between backward calls.
        let w = Parameter::<f64>::new("w", array![[2.0]]);
        let shared = w.value().elementwise_mul(w.value()); // w²
        shared.sum().backward();
        let g1 = w.grad()[[0, 0]];
        shared.sum().backward();
        let g2 = w.grad()[[0, 0]];
        assert!((g1 - 4.0).abs() < 1e-12);
        assert!(
            (g2 - 8.0).abs() < 1e-12,
            "second pass must add the same gradient"
        );
    }
}
