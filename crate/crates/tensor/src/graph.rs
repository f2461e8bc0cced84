//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every op appends a node holding its forward value; [`Graph::backward`]
//! walks the tape in reverse. Shape mismatches inside the graph are
//! programming errors and panic with the offending shapes.

use std::collections::HashMap;

use crate::params::{ParamId, ParamStore};
use crate::tensor::gemm_into;
use crate::{Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, T, T),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    LeakyRelu(Var, T),
    Abs(Var),
    Sqrt(Var),
    Powf(Var, T),
    ClampMin(Var, T),
    MatMul(Var, bool, Var, bool),
    SumAll(Var),
    RowSums(Var),
    ColSums(Var),
    SoftmaxRows(Var),
    Im2Col {
        x: Var,
        kernel: usize,
        dilation: usize,
        stride: usize,
        pad_left: usize,
    },
    ReflectPadCols(Var, usize),
    ZeroStuffCols(Var, usize),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherCols(Var, Vec<usize>),
    ReverseRows(Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of recorded operations.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Grads<T> {
    per_node: Vec<Option<Tensor<T>>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient w.r.t. a leaf or parameter node, if it influenced the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.per_node.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id).and_then(|&v| self.wrt(v))
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }
}

fn bcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

fn bcast_shape(a: (usize, usize), b: (usize, usize), what: &str) -> (usize, usize) {
    match (bcast_dim(a.0, b.0), bcast_dim(a.1, b.1)) {
        (Some(r), Some(c)) => (r, c),
        _ => panic!("{what}: cannot broadcast {a:?} with {b:?}"),
    }
}

#[inline]
fn bidx(t: &Tensor<impl Scalar>, r: usize, c: usize) -> usize {
    let rr = if t.rows() == 1 { 0 } else { r };
    let cc = if t.cols() == 1 { 0 } else { c };
    rr * t.cols() + cc
}

fn broadcast_zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str, f: impl Fn(T, T) -> T) -> Tensor<T> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let (rows, cols) = bcast_shape(a.shape(), b.shape(), what);
    let (ad, bd) = (a.data(), b.data());
    Tensor::from_fn(rows, cols, |r, c| f(ad[bidx(a, r, c)], bd[bidx(b, r, c)]))
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to<T: Scalar>(g: Tensor<T>, shape: (usize, usize)) -> Tensor<T> {
    if g.shape() == shape {
        return g;
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            let i = bidx(&out, r, c);
            out.data_mut()[i] += g.at(r, c);
        }
    }
    out
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `1x1` node.
    pub fn item(&self, v: Var) -> T {
        let t = self.value(v);
        assert_eq!(t.shape(), (1, 1), "item() on non-scalar {:?}", t.shape());
        t.at(0, 0)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, x: Var, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Grads::wrt`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Parameter leaf; repeated calls with the same id return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    /// Copy of `x` cut off from the tape.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_zip(self.value(a), self.value(b), "add", |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_zip(self.value(a), self.value(b), "sub", |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_zip(self.value(a), self.value(b), "mul", |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_zip(self.value(a), self.value(b), "div", |x, y| x / y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Div(a, b), rg)
    }

    /// `x * scale + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let v = self.value(x).map(|e| e * scale + shift);
        self.unary(x, v, Op::Affine(x, scale, shift))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.affine(x, s, T::zero())
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.affine(x, -T::one(), T::zero())
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.exp());
        self.unary(x, v, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.ln());
        self.unary(x, v, Op::Log(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.tanh());
        self.unary(x, v, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.unary(x, v, Op::Sigmoid(x))
    }

    /// Numerically stable `ln σ(x)`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(log_sigmoid);
        self.unary(x, v, Op::LogSigmoid(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let v = self.value(x).map(|e| if e > T::zero() { e } else { e * slope });
        self.unary(x, v, Op::LeakyRelu(x, slope))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, T::zero())
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.abs());
        self.unary(x, v, Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.sqrt());
        self.unary(x, v, Op::Sqrt(x))
    }

    pub fn powf(&mut self, x: Var, p: T) -> Var {
        let v = self.value(x).map(|e| e.powf(p));
        self.unary(x, v, Op::Powf(x, p))
    }

    /// `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: T) -> Var {
        let v = self.value(x).map(|e| if e > floor { e } else { floor });
        self.unary(x, v, Op::ClampMin(x, floor))
    }

    /// `op(a) · op(b)`, `op` optionally transposing.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let v = self
            .value(a)
            .matmul(ta, self.value(b), tb)
            .unwrap_or_else(|e| panic!("{e}"));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, ta, b, tb), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.unary(x, v, Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Sum of each row: `[r, c] → [r, 1]`.
    pub fn row_sums(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::from_fn(t.rows(), 1, |r, _| T::sum_wide(t.row(r).iter().copied()));
        self.unary(x, v, Op::RowSums(x))
    }

    /// Sum of each column: `[r, c] → [1, c]`.
    pub fn col_sums(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut v = Tensor::zeros(1, t.cols());
        for r in 0..t.rows() {
            for (o, &e) in v.data_mut().iter_mut().zip(t.row(r)) {
                *o += e;
            }
        }
        self.unary(x, v, Op::ColSums(x))
    }

    /// Softmax along each row.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                z += *e;
            }
            for e in row.iter_mut() {
                *e /= z;
            }
        }
        self.unary(x, v, Op::SoftmaxRows(x))
    }

    /// Unfolds `[C, T]` into `[C·K, T_out]` convolution patches (zero padded),
    /// with `T_out = (T + pad_left + pad_right − dilation·(K−1) − 1) / stride + 1`.
    pub fn im2col(
        &mut self,
        x: Var,
        kernel: usize,
        dilation: usize,
        stride: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> Var {
        let t = self.value(x);
        let (c, n) = t.shape();
        let span = dilation * (kernel - 1) + 1;
        let padded = n + pad_left + pad_right;
        assert!(
            padded >= span && stride >= 1,
            "im2col: length {n} (+{pad_left}+{pad_right}) shorter than receptive field {span}"
        );
        let t_out = (padded - span) / stride + 1;
        let mut out = Tensor::zeros(c * kernel, t_out);
        for ci in 0..c {
            let src = t.row(ci);
            for k in 0..kernel {
                let dst = out.row_mut(ci * kernel + k);
                let off = k * dilation;
                for (j, d) in dst.iter_mut().enumerate() {
                    let p = j * stride + off;
                    if p >= pad_left && p - pad_left < n {
                        *d = src[p - pad_left];
                    }
                }
            }
        }
        self.unary(
            x,
            out,
            Op::Im2Col {
                x,
                kernel,
                dilation,
                stride,
                pad_left,
            },
        )
    }

    /// Reflection padding of `pad` columns on both ends (`pad < T`).
    pub fn reflect_pad_cols(&mut self, x: Var, pad: usize) -> Var {
        let t = self.value(x);
        let n = t.cols();
        assert!(pad < n, "reflect_pad_cols: pad {pad} needs at least {} columns", pad + 1);
        let v = Tensor::from_fn(t.rows(), n + 2 * pad, |r, j| t.at(r, reflect_index(j, pad, n)));
        self.unary(x, v, Op::ReflectPadCols(x, pad))
    }

    /// Inserts `factor − 1` zero columns between consecutive columns:
    /// `[C, T] → [C, (T−1)·factor + 1]`.
    pub fn zero_stuff_cols(&mut self, x: Var, factor: usize) -> Var {
        let t = self.value(x);
        let n = t.cols();
        let mut v = Tensor::zeros(t.rows(), (n - 1) * factor + 1);
        for r in 0..t.rows() {
            for c in 0..n {
                v.set(r, c * factor, t.at(r, c));
            }
        }
        self.unary(x, v, Op::ZeroStuffCols(x, factor))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let t = self.value(x);
        assert!(start + len <= t.rows(), "slice_rows {start}+{len} of {:?}", t.shape());
        let v = Tensor::new(len, t.cols(), t.data()[start * t.cols()..(start + len) * t.cols()].to_vec())
            .expect("slice shape");
        self.unary(x, v, Op::SliceRows(x, start))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let t = self.value(x);
        assert!(start + len <= t.cols(), "slice_cols {start}+{len} of {:?}", t.shape());
        let v = Tensor::from_fn(t.rows(), len, |r, c| t.at(r, start + c));
        self.unary(x, v, Op::SliceCols(x, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let v = Tensor::new(rows, cols, data).expect("concat shape");
        self.push(v, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.row_mut(r)[off..off + t.cols()].copy_from_slice(t.row(r));
            }
            off += t.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Output column `j` is input column `idx[j]`.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Var {
        let t = self.value(x);
        for &i in idx {
            assert!(i < t.cols(), "gather_cols index {i} out of {} columns", t.cols());
        }
        let v = Tensor::from_fn(t.rows(), idx.len(), |r, j| t.at(r, idx[j]));
        self.unary(x, v, Op::GatherCols(x, idx.to_vec()))
    }

    pub fn reverse_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.rows();
        let v = Tensor::from_fn(n, t.cols(), |r, c| t.at(n - 1 - r, c));
        self.unary(x, v, Op::ReverseRows(x))
    }

    /// Back-propagates from a `1x1` node.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.shape(loss), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let g = match &node.op {
                Op::Leaf | Op::Param => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backprop_node(&node.op, &node.value, g, &mut grads);
        }
        grads.resize(self.nodes.len(), None);
        Grads {
            per_node: grads,
            params: self.params.clone(),
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, op: &Op<T>, out: &Tensor<T>, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: &Var| &self.nodes[v.0].value;
        match op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                if self.rg(*b) {
                    self.acc(grads, *b, reduce_to(g.clone(), val(b).shape()));
                }
                self.acc(grads, *a, reduce_to(g, val(a).shape()));
            }
            Op::Sub(a, b) => {
                if self.rg(*b) {
                    self.acc(grads, *b, reduce_to(g.map(|e| -e), val(b).shape()));
                }
                self.acc(grads, *a, reduce_to(g, val(a).shape()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                if self.rg(*a) {
                    let ga = broadcast_zip(&g, bv, "mul-grad", |x, y| x * y);
                    self.acc(grads, *a, reduce_to(ga, av.shape()));
                }
                if self.rg(*b) {
                    let gb = broadcast_zip(&g, av, "mul-grad", |x, y| x * y);
                    self.acc(grads, *b, reduce_to(gb, bv.shape()));
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(a), val(b));
                if self.rg(*a) {
                    let ga = broadcast_zip(&g, bv, "div-grad", |x, y| x / y);
                    self.acc(grads, *a, reduce_to(ga, av.shape()));
                }
                if self.rg(*b) {
                    // d(a/b)/db = -(a/b)/b = -out/b
                    let q = broadcast_zip(out, bv, "div-grad", |o, y| o / y);
                    let gb = g.zip_map(&q, |x, y| -x * y);
                    self.acc(grads, *b, reduce_to(gb, bv.shape()));
                }
            }
            Op::Affine(x, s, _) => {
                let s = *s;
                self.acc(grads, *x, g.map(|e| e * s));
            }
            Op::Exp(x) => self.acc(grads, *x, g.zip_map(out, |a, y| a * y)),
            Op::Log(x) => self.acc(grads, *x, g.zip_map(val(x), |a, v| a / v)),
            Op::Tanh(x) => self.acc(grads, *x, g.zip_map(out, |a, y| a * (T::one() - y * y))),
            Op::Sigmoid(x) => self.acc(grads, *x, g.zip_map(out, |a, y| a * y * (T::one() - y))),
            Op::LogSigmoid(x) => {
                // d/dx ln σ(x) = σ(−x)
                self.acc(grads, *x, g.zip_map(val(x), |a, v| a * sigmoid(-v)))
            }
            Op::LeakyRelu(x, s) => {
                let s = *s;
                self.acc(
                    grads,
                    *x,
                    g.zip_map(val(x), |a, v| if v > T::zero() { a } else { a * s }),
                )
            }
            Op::Abs(x) => self.acc(
                grads,
                *x,
                g.zip_map(val(x), |a, v| {
                    if v > T::zero() {
                        a
                    } else if v < T::zero() {
                        -a
                    } else {
                        T::zero()
                    }
                }),
            ),
            Op::Sqrt(x) => self.acc(grads, *x, g.zip_map(out, |a, y| a / (y + y))),
            Op::Powf(x, p) => {
                let p = *p;
                self.acc(grads, *x, g.zip_map(val(x), |a, v| a * p * v.powf(p - T::one())))
            }
            Op::ClampMin(x, f) => {
                let f = *f;
                self.acc(grads, *x, g.zip_map(val(x), |a, v| if v > f { a } else { T::zero() }))
            }
            Op::MatMul(a, ta, b, tb) => {
                let (av, bv) = (val(a), val(b));
                if self.rg(*a) {
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    if !*ta {
                        // dA = dC · op(B)ᵀ
                        gemm_into(&g, false, bv, !*tb, T::one(), T::zero(), &mut ga);
                    } else {
                        // dA = op(B) · dCᵀ
                        gemm_into(bv, *tb, &g, true, T::one(), T::zero(), &mut ga);
                    }
                    self.acc(grads, *a, ga);
                }
                if self.rg(*b) {
                    let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                    if !*tb {
                        // dB = op(A)ᵀ · dC
                        gemm_into(av, !*ta, &g, false, T::one(), T::zero(), &mut gb);
                    } else {
                        // dB = dCᵀ · op(A)
                        gemm_into(&g, true, av, *ta, T::one(), T::zero(), &mut gb);
                    }
                    self.acc(grads, *b, gb);
                }
            }
            Op::SumAll(x) => {
                let s = g.at(0, 0);
                let (r, c) = val(x).shape();
                self.acc(grads, *x, Tensor::full(r, c, s));
            }
            Op::RowSums(x) => {
                let (r, c) = val(x).shape();
                self.acc(grads, *x, Tensor::from_fn(r, c, |i, _| g.at(i, 0)));
            }
            Op::ColSums(x) => {
                let (r, c) = val(x).shape();
                self.acc(grads, *x, Tensor::from_fn(r, c, |_, j| g.at(0, j)));
            }
            Op::SoftmaxRows(x) => {
                let mut gx = g;
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let row = gx.row_mut(r);
                    let dot: T = row.iter().zip(y).map(|(&a, &b)| a * b).sum();
                    for (e, &yy) in row.iter_mut().zip(y) {
                        *e = yy * (*e - dot);
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::Im2Col {
                x,
                kernel,
                dilation,
                stride,
                pad_left,
            } => {
                let (c, n) = val(x).shape();
                let mut gx = Tensor::zeros(c, n);
                for ci in 0..c {
                    for k in 0..*kernel {
                        let src = g.row(ci * kernel + k);
                        let off = k * dilation;
                        let dst = gx.row_mut(ci);
                        for (j, &e) in src.iter().enumerate() {
                            let p = j * stride + off;
                            if p >= *pad_left && p - pad_left < n {
                                dst[p - pad_left] += e;
                            }
                        }
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::ReflectPadCols(x, pad) => {
                let (r, n) = val(x).shape();
                let mut gx = Tensor::zeros(r, n);
                for i in 0..r {
                    for j in 0..g.cols() {
                        let e = g.at(i, j);
                        let k = reflect_index(j, *pad, n);
                        gx.row_mut(i)[k] += e;
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::ZeroStuffCols(x, factor) => {
                let (r, n) = val(x).shape();
                self.acc(grads, *x, Tensor::from_fn(r, n, |i, j| g.at(i, j * factor)));
            }
            Op::SliceRows(x, start) => {
                let (r, c) = val(x).shape();
                let mut gx = Tensor::zeros(r, c);
                gx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                self.acc(grads, *x, gx);
            }
            Op::SliceCols(x, start) => {
                let (r, c) = val(x).shape();
                let mut gx = Tensor::zeros(r, c);
                for i in 0..r {
                    gx.row_mut(i)[*start..start + g.cols()].copy_from_slice(g.row(i));
                }
                self.acc(grads, *x, gx);
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut off = 0;
                for p in parts {
                    let rows = val(p).rows();
                    if self.rg(*p) {
                        let d = g.data()[off * cols..(off + rows) * cols].to_vec();
                        self.acc(grads, *p, Tensor::new(rows, cols, d).expect("shape"));
                    }
                    off += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let (rows, cols) = val(p).shape();
                    if self.rg(*p) {
                        let o = off;
                        self.acc(grads, *p, Tensor::from_fn(rows, cols, |i, j| g.at(i, o + j)));
                    }
                    off += cols;
                }
            }
            Op::GatherCols(x, idx) => {
                let (r, c) = val(x).shape();
                let mut gx = Tensor::zeros(r, c);
                for i in 0..r {
                    let src = g.row(i);
                    let dst = gx.row_mut(i);
                    for (j, &k) in idx.iter().enumerate() {
                        dst[k] += src[j];
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::ReverseRows(x) => {
                let (r, c) = val(x).shape();
                self.acc(grads, *x, Tensor::from_fn(r, c, |i, j| g.at(r - 1 - i, j)));
            }
        }
    }
}

fn reflect_index(j: usize, pad: usize, n: usize) -> usize {
    let i = j as isize - pad as isize;
    let n = n as isize;
    let k = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    k as usize
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn log_sigmoid<T: Scalar>(x: T) -> T {
    // ln σ(x) = −softplus(−x) = min(x, 0) − ln(1 + e^{−|x|})
    x.min(T::zero()) - (-x.abs()).exp().ln_1p()
}
