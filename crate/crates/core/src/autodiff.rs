//! Minimal reverse-mode automatic differentiation on dense row-major
//! f64 matrices.
//!
//! A [`Tape`] is an append-only list of nodes `(op, input ids, forward
//! value)`; building an expression evaluates it eagerly, and
//! [`Tape::backward`] walks the list once in reverse accumulating adjoints
//! in deterministic (sequential, fixed) order. Scalars are `1x1` tensors.
//!
//! Besides the usual dense ops there are composite builders for the
//! hyperbolic pieces the encoder and decoder need — row-wise Möbius
//! addition, origin exp/log maps, the reparameterized wrapped-normal
//! sample — assembled from primitives so their gradients come out of the
//! same machinery that the finite-difference checker validates.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::wrapped::{ln_sinhc, RandomState};

// ---------------------------------------------------------------------------
// Tensors
// ---------------------------------------------------------------------------

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape does not match data length");
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(1, 1, vec![v])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Gaussian-filled tensor, scale `s`.
    pub fn randn(rows: usize, cols: usize, s: f64, rng: &mut RandomState) -> Self {
        let mut t = Tensor::zeros(rows, cols);
        for v in &mut t.data {
            *v = s * rng.normal();
        }
        t
    }
}

/// `C = A B` with the classic i-k-j loop: each output element is a fixed
/// left-to-right sum, so results are bit-stable run to run.
fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul inner dimensions");
    let (m, n) = (a.rows, b.cols);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row(i);
        let crow = &mut c[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            let brow = &b.data[l * n..(l + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    Tensor::from_vec(m, n, c)
}

/// `C = A B^T`: rows of both operands stream contiguously.
fn matmul_bt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.cols, "matmul_bt inner dimensions");
    let (m, n) = (a.rows, b.rows);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row(i);
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = b.row(j);
            let mut acc = 0.0;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            *cv = acc;
        }
    }
    Tensor::from_vec(m, n, c)
}

/// `C = A^T B` as a sequence of row axpys, ascending over `A`'s rows.
fn matmul_at(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows, "matmul_at inner dimensions");
    let (k, n) = (a.cols, b.cols);
    let mut c = vec![0.0; k * n];
    for i in 0..a.rows {
        let arow = a.row(i);
        let brow = b.row(i);
        for (l, &av) in arow.iter().enumerate() {
            let crow = &mut c[l * n..(l + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    Tensor::from_vec(k, n, c)
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    AddRowBias,
    MulColVec,
    DivColVec,
    AddConst,
    MulConst(f64),
    Neg,
    Tanh,
    Sigmoid,
    Softplus,
    Exp,
    Ln,
    Sqrt,
    Asinh,
    Atanh,
    LnSinhc,
    RowNorm,
    SumAxis1,
    SumAll,
    RepeatRows(usize),
    TileRows(usize),
    Reshape,
    SliceCols(usize, usize),
}

struct Node {
    op: Op,
    a: usize,
    b: usize,
    value: Tensor,
}

/// Append-only computation graph. Dropping the tape frees every forward
/// value; training rebuilds one per step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` in the overflow-free form `max(x, 0) + ln(1 + e^-|x|)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, op: Op, a: usize, b: usize, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, a, b, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert an input (parameter or constant) node.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, usize::MAX, usize::MAX, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul(self.value(a), self.value(b));
        self.push(Op::MatMul, a.0, b.0, v)
    }

    fn zip_same_shape(&mut self, op: Op, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        let data: Vec<f64> = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(op, a.0, b.0, v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_same_shape(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_same_shape(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_same_shape(Op::Mul, a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_same_shape(Op::Div, a, b, |x, y| x / y)
    }

    /// `[m x n] + [1 x n]`, the bias pattern.
    pub fn add_row_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(bias));
        assert_eq!(tb.rows, 1, "bias must be a row vector");
        assert_eq!(ta.cols, tb.cols, "bias width mismatch");
        let mut v = ta.clone();
        for row in v.data.chunks_mut(v.cols) {
            for (x, &b) in row.iter_mut().zip(&tb.data) {
                *x += b;
            }
        }
        self.push(Op::AddRowBias, a.0, bias.0, v)
    }

    fn colvec_op(&mut self, op: Op, a: NodeId, s: NodeId, f: impl Fn(f64, f64) -> f64) -> NodeId {
        let (ta, ts) = (self.value(a), self.value(s));
        assert_eq!(ts.cols, 1, "column-vector operand expected");
        assert_eq!(ta.rows, ts.rows, "column-vector height mismatch");
        let mut v = ta.clone();
        for (i, row) in v.data.chunks_mut(v.cols).enumerate() {
            let sv = ts.data[i];
            for x in row {
                *x = f(*x, sv);
            }
        }
        self.push(op, a.0, s.0, v)
    }

    /// `[m x n] * [m x 1]` broadcast across columns.
    pub fn mul_colvec(&mut self, a: NodeId, s: NodeId) -> NodeId {
        self.colvec_op(Op::MulColVec, a, s, |x, y| x * y)
    }

    /// `[m x n] / [m x 1]` broadcast across columns.
    pub fn div_colvec(&mut self, a: NodeId, s: NodeId) -> NodeId {
        self.colvec_op(Op::DivColVec, a, s, |x, y| x / y)
    }

    fn unary(&mut self, op: Op, a: NodeId, f: impl Fn(f64) -> f64) -> NodeId {
        let ta = self.value(a);
        let data: Vec<f64> = ta.data.iter().map(|&x| f(x)).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(op, a.0, a.0, v)
    }

    pub fn add_const(&mut self, a: NodeId, k: f64) -> NodeId {
        self.unary(Op::AddConst, a, |x| x + k)
    }

    pub fn mul_const(&mut self, a: NodeId, k: f64) -> NodeId {
        self.unary(Op::MulConst(k), a, |x| x * k)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Neg, a, |x| -x)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Tanh, a, f64::tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sigmoid, a, sigmoid)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Softplus, a, softplus)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Exp, a, f64::exp)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Ln, a, f64::ln)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sqrt, a, f64::sqrt)
    }

    pub fn asinh(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Asinh, a, f64::asinh)
    }

    /// Elementwise artanh with the argument nudged inside (-1, 1).
    pub fn atanh(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Atanh, a, |x| x.clamp(-(1.0 - 1e-15), 1.0 - 1e-15).atanh())
    }

    /// Elementwise `ln(sinh(x)/x)` for nonnegative inputs.
    pub fn ln_sinhc(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::LnSinhc, a, ln_sinhc)
    }

    /// Per-row Euclidean norm with an epsilon floor: `sqrt(sum x^2 + eps^2)`.
    /// The floor keeps the gradient defined on all-zero rows.
    pub fn row_norm(&mut self, a: NodeId, eps: f64) -> NodeId {
        let ta = self.value(a);
        let data: Vec<f64> = ta
            .data
            .chunks(ta.cols)
            .map(|row| (row.iter().map(|x| x * x).sum::<f64>() + eps * eps).sqrt())
            .collect();
        let v = Tensor::from_vec(ta.rows, 1, data);
        self.push(Op::RowNorm, a.0, a.0, v)
    }

    pub fn sum_axis1(&mut self, a: NodeId) -> NodeId {
        let ta = self.value(a);
        let data: Vec<f64> = ta.data.chunks(ta.cols).map(|row| row.iter().sum()).collect();
        let v = Tensor::from_vec(ta.rows, 1, data);
        self.push(Op::SumAxis1, a.0, a.0, v)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data.iter().sum();
        self.push(Op::SumAll, a.0, a.0, Tensor::scalar(s))
    }

    /// Each of the `m` rows repeated `k` times consecutively: row `i*k + r`
    /// of the output is row `i` of the input.
    pub fn repeat_rows(&mut self, a: NodeId, k: usize) -> NodeId {
        let ta = self.value(a);
        let mut data = Vec::with_capacity(ta.len() * k);
        for row in ta.data.chunks(ta.cols) {
            for _ in 0..k {
                data.extend_from_slice(row);
            }
        }
        let v = Tensor::from_vec(ta.rows * k, ta.cols, data);
        self.push(Op::RepeatRows(k), a.0, a.0, v)
    }

    /// The whole block repeated `k` times: row `b*m + i` of the output is
    /// row `i` of the input.
    pub fn tile_rows(&mut self, a: NodeId, k: usize) -> NodeId {
        let ta = self.value(a);
        let mut data = Vec::with_capacity(ta.len() * k);
        for _ in 0..k {
            data.extend_from_slice(&ta.data);
        }
        let v = Tensor::from_vec(ta.rows * k, ta.cols, data);
        self.push(Op::TileRows(k), a.0, a.0, v)
    }

    /// Reinterpret the row-major buffer under a new shape.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let ta = self.value(a);
        assert_eq!(ta.len(), rows * cols, "reshape must preserve length");
        let v = Tensor::from_vec(rows, cols, ta.data.clone());
        self.push(Op::Reshape, a.0, a.0, v)
    }

    /// Columns `[from, to)` of the input.
    pub fn slice_cols(&mut self, a: NodeId, from: usize, to: usize) -> NodeId {
        let ta = self.value(a);
        assert!(from < to && to <= ta.cols, "column slice out of range");
        let mut data = Vec::with_capacity(ta.rows * (to - from));
        for row in ta.data.chunks(ta.cols) {
            data.extend_from_slice(&row[from..to]);
        }
        let v = Tensor::from_vec(ta.rows, to - from, data);
        self.push(Op::SliceCols(from, to), a.0, a.0, v)
    }

    /// Reverse sweep from a scalar root; returns one adjoint slot per node.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(
            self.value(root).shape(),
            (1, 1),
            "backward roots at a scalar"
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.accumulate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let (a, b) = (node.a, node.b);
        let add_into = |slot: &mut Option<Tensor>, rows: usize, cols: usize, f: &mut dyn FnMut(&mut Tensor)| {
            let t = slot.get_or_insert_with(|| Tensor::zeros(rows, cols));
            f(t);
        };
        match node.op {
            Op::Leaf => {}
            Op::MatMul => {
                let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
                let da = matmul_bt(g, tb);
                let db = matmul_at(ta, g);
                add_into(&mut grads[a], da.rows, da.cols, &mut |t| {
                    for (x, y) in t.data.iter_mut().zip(&da.data) {
                        *x += y;
                    }
                });
                add_into(&mut grads[b], db.rows, db.cols, &mut |t| {
                    for (x, y) in t.data.iter_mut().zip(&db.data) {
                        *x += y;
                    }
                });
            }
            Op::Add => {
                for id in [a, b] {
                    add_into(&mut grads[id], g.rows, g.cols, &mut |t| {
                        for (x, y) in t.data.iter_mut().zip(&g.data) {
                            *x += y;
                        }
                    });
                }
            }
            Op::Sub => {
                add_into(&mut grads[a], g.rows, g.cols, &mut |t| {
                    for (x, y) in t.data.iter_mut().zip(&g.data) {
                        *x += y;
                    }
                });
                add_into(&mut grads[b], g.rows, g.cols, &mut |t| {
                    for (x, y) in t.data.iter_mut().zip(&g.data) {
                        *x -= y;
                    }
                });
            }
            Op::Mul => {
                let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
                add_into(&mut grads[a], ta.rows, ta.cols, &mut |t| {
                    for ((x, y), v) in t.data.iter_mut().zip(&g.data).zip(&tb.data) {
                        *x += y * v;
                    }
                });
                add_into(&mut grads[b], tb.rows, tb.cols, &mut |t| {
                    for ((x, y), v) in t.data.iter_mut().zip(&g.data).zip(&ta.data) {
                        *x += y * v;
                    }
                });
            }
            Op::Div => {
                let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
                add_into(&mut grads[a], ta.rows, ta.cols, &mut |t| {
                    for ((x, y), v) in t.data.iter_mut().zip(&g.data).zip(&tb.data) {
                        *x += y / v;
                    }
                });
                add_into(&mut grads[b], tb.rows, tb.cols, &mut |t| {
                    for (i, x) in t.data.iter_mut().enumerate() {
                        let num = ta.data[i];
                        let den = tb.data[i];
                        *x += -g.data[i] * num / (den * den);
                    }
                });
            }
            Op::AddRowBias => {
                add_into(&mut grads[a], g.rows, g.cols, &mut |t| {
                    for (x, y) in t.data.iter_mut().zip(&g.data) {
                        *x += y;
                    }
                });
                let cols = g.cols;
                add_into(&mut grads[b], 1, cols, &mut |t| {
                    for row in g.data.chunks(cols) {
                        for (x, y) in t.data.iter_mut().zip(row) {
                            *x += y;
                        }
                    }
                });
            }
            Op::MulColVec | Op::DivColVec => {
                let (ta, ts) = (&self.nodes[a].value, &self.nodes[b].value);
                let div = matches!(node.op, Op::DivColVec);
                let cols = ta.cols;
                add_into(&mut grads[a], ta.rows, ta.cols, &mut |t| {
                    for (i, (trow, grow)) in t
                        .data
                        .chunks_mut(cols)
                        .zip(g.data.chunks(cols))
                        .enumerate()
                    {
                        let sv = ts.data[i];
                        let f = if div { 1.0 / sv } else { sv };
                        for (x, y) in trow.iter_mut().zip(grow) {
                            *x += y * f;
                        }
                    }
                });
                add_into(&mut grads[b], ts.rows, 1, &mut |t| {
                    for (i, (arow, grow)) in ta
                        .data
                        .chunks(cols)
                        .zip(g.data.chunks(cols))
                        .enumerate()
                    {
                        let sv = ts.data[i];
                        let mut acc = 0.0;
                        for (&av, &gv) in arow.iter().zip(grow) {
                            acc += if div { -gv * av / (sv * sv) } else { gv * av };
                        }
                        t.data[i] += acc;
                    }
                });
            }
            Op::AddConst | Op::Reshape => {
                let ta = &self.nodes[a].value;
                add_into(&mut grads[a], ta.rows, ta.cols, &mut |t| {
                    for (x, y) in t.data.iter_mut().zip(&g.data) {
                        *x += y;
                    }
                });
            }
            Op::MulConst(k) => {
                add_into(&mut grads[a], g.rows, g.cols, &mut |t| {
                    for (x, y) in t.data.iter_mut().zip(&g.data) {
                        *x += k * y;
                    }
                });
            }
            Op::Neg => {
                add_into(&mut grads[a], g.rows, g.cols, &mut |t| {
                    for (x, y) in t.data.iter_mut().zip(&g.data) {
                        *x -= y;
                    }
                });
            }
            Op::Tanh | Op::Sigmoid | Op::Exp | Op::Sqrt => {
                let out = &node.value;
                let op = node.op;
                add_into(&mut grads[a], out.rows, out.cols, &mut |t| {
                    for ((x, y), &o) in t.data.iter_mut().zip(&g.data).zip(&out.data) {
                        let d = match op {
                            Op::Tanh => 1.0 - o * o,
                            Op::Sigmoid => o * (1.0 - o),
                            Op::Exp => o,
                            Op::Sqrt => 0.5 / o,
                            _ => unreachable!(),
                        };
                        *x += y * d;
                    }
                });
            }
            Op::Softplus | Op::Ln | Op::Asinh | Op::Atanh | Op::LnSinhc => {
                let inp = &self.nodes[a].value;
                let op = node.op;
                add_into(&mut grads[a], inp.rows, inp.cols, &mut |t| {
                    for ((x, y), &v) in t.data.iter_mut().zip(&g.data).zip(&inp.data) {
                        let d = match op {
                            Op::Softplus => sigmoid(v),
                            Op::Ln => 1.0 / v,
                            Op::Asinh => 1.0 / (v * v + 1.0).sqrt(),
                            Op::Atanh => 1.0 / (1.0 - v * v),
                            // d/dx ln(sinh x / x) = coth x - 1/x -> x/3 near 0
                            Op::LnSinhc => {
                                if v < 1e-4 {
                                    v / 3.0 - v * v * v / 45.0
                                } else {
                                    1.0 / v.tanh() - 1.0 / v
                                }
                            }
                            _ => unreachable!(),
                        };
                        *x += y * d;
                    }
                });
            }
            Op::RowNorm => {
                let inp = &self.nodes[a].value;
                let out = &node.value;
                let cols = inp.cols;
                add_into(&mut grads[a], inp.rows, inp.cols, &mut |t| {
                    for (i, (trow, irow)) in t
                        .data
                        .chunks_mut(cols)
                        .zip(inp.data.chunks(cols))
                        .enumerate()
                    {
                        let scale = g.data[i] / out.data[i];
                        for (x, &v) in trow.iter_mut().zip(irow) {
                            *x += scale * v;
                        }
                    }
                });
            }
            Op::SumAxis1 => {
                let inp = &self.nodes[a].value;
                let cols = inp.cols;
                add_into(&mut grads[a], inp.rows, inp.cols, &mut |t| {
                    for (i, trow) in t.data.chunks_mut(cols).enumerate() {
                        let gv = g.data[i];
                        for x in trow {
                            *x += gv;
                        }
                    }
                });
            }
            Op::SumAll => {
                let inp = &self.nodes[a].value;
                let gv = g.data[0];
                add_into(&mut grads[a], inp.rows, inp.cols, &mut |t| {
                    for x in &mut t.data {
                        *x += gv;
                    }
                });
            }
            Op::RepeatRows(k) => {
                let inp = &self.nodes[a].value;
                let cols = inp.cols;
                add_into(&mut grads[a], inp.rows, inp.cols, &mut |t| {
                    for (i, trow) in t.data.chunks_mut(cols).enumerate() {
                        for r in 0..k {
                            let grow = &g.data[(i * k + r) * cols..(i * k + r + 1) * cols];
                            for (x, y) in trow.iter_mut().zip(grow) {
                                *x += y;
                            }
                        }
                    }
                });
            }
            Op::TileRows(k) => {
                let inp = &self.nodes[a].value;
                let (rows, cols) = (inp.rows, inp.cols);
                add_into(&mut grads[a], rows, cols, &mut |t| {
                    for b in 0..k {
                        for i in 0..rows {
                            let grow = &g.data[(b * rows + i) * cols..(b * rows + i + 1) * cols];
                            let trow = &mut t.data[i * cols..(i + 1) * cols];
                            for (x, y) in trow.iter_mut().zip(grow) {
                                *x += y;
                            }
                        }
                    }
                });
            }
            Op::SliceCols(from, _to) => {
                let inp = &self.nodes[a].value;
                let (cols_in, cols_out) = (inp.cols, g.cols);
                add_into(&mut grads[a], inp.rows, inp.cols, &mut |t| {
                    for (trow, grow) in t.data.chunks_mut(cols_in).zip(g.data.chunks(cols_out)) {
                        for (x, y) in trow[from..from + cols_out].iter_mut().zip(grow) {
                            *x += y;
                        }
                    }
                });
            }
        }
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// The adjoint of a node, if the root depends on it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

// ---------------------------------------------------------------------------
// Manifold composites (assembled from primitives)
// ---------------------------------------------------------------------------

/// Row-wise Möbius addition of two `[m x n]` batches of ball points.
pub fn mobius_add_rows(tape: &mut Tape, x: NodeId, y: NodeId, c: f64) -> NodeId {
    let xy2 = {
        let m = tape.mul(x, y);
        let s = tape.sum_axis1(m);
        tape.mul_const(s, 2.0 * c)
    };
    let xx = {
        let m = tape.mul(x, x);
        tape.sum_axis1(m)
    };
    let yy = {
        let m = tape.mul(y, y);
        tape.sum_axis1(m)
    };
    // denominator 1 + 2c<x,y> + c^2 |x|^2 |y|^2
    let den = {
        let xxyy = tape.mul(xx, yy);
        let t = tape.mul_const(xxyy, c * c);
        let t = tape.add(xy2, t);
        tape.add_const(t, 1.0)
    };
    // coefficients (1 + 2c<x,y> + c|y|^2) and (1 - c|x|^2)
    let ax = {
        let t = tape.mul_const(yy, c);
        let t = tape.add(xy2, t);
        tape.add_const(t, 1.0)
    };
    let ay = {
        let t = tape.mul_const(xx, -c);
        tape.add_const(t, 1.0)
    };
    let num = {
        let l = tape.mul_colvec(x, ax);
        let r = tape.mul_colvec(y, ay);
        tape.add(l, r)
    };
    tape.div_colvec(num, den)
}

/// Origin exponential map, row-wise, arclength normalization:
/// `exp_0(u) = tanh(sqrt(c)|u|/2) / (sqrt(c)|u|) * u`.
pub fn exp0_rows(tape: &mut Tape, u: NodeId, c: f64) -> NodeId {
    let sc = c.sqrt();
    let s = tape.row_norm(u, 1e-12);
    let half = tape.mul_const(s, sc / 2.0);
    let th = tape.tanh(half);
    let den = tape.mul_const(s, sc);
    let f = tape.div(th, den);
    tape.mul_colvec(u, f)
}

/// Origin logarithm map, row-wise: `log_0(w) = 2 artanh(sqrt(c)|w|) /
/// (sqrt(c)|w|) * w`. Inverse of [`exp0_rows`].
pub fn log0_rows(tape: &mut Tape, w: NodeId, c: f64) -> NodeId {
    let sc = c.sqrt();
    let s = tape.row_norm(w, 1e-12);
    let r = tape.mul_const(s, sc);
    let at = tape.atanh(r);
    let num = tape.mul_const(at, 2.0);
    let den = tape.mul_const(s, sc);
    let f = tape.div(num, den);
    tape.mul_colvec(w, f)
}

/// General exponential map: translate the origin ray to `base` by Möbius
/// addition. Matches `geometry::exp_map` row by row.
pub fn exp_map_rows(tape: &mut Tape, base: NodeId, u: NodeId, c: f64) -> NodeId {
    let tip = exp0_rows(tape, u, c);
    mobius_add_rows(tape, base, tip, c)
}

/// Reparameterized wrapped-normal draw: `z = exp_map(mu, sigma * eps)`
/// with `eps` a leaf of frozen standard-normal noise. Returns
/// `(z, tangent)` where `tangent = sigma * eps` is the arclength tangent
/// whose density the KL term needs.
pub fn wrapped_sample_rows(
    tape: &mut Tape,
    mu: NodeId,
    sigma: NodeId,
    eps: NodeId,
    c: f64,
) -> (NodeId, NodeId) {
    let tangent = tape.mul(sigma, eps);
    let z = exp_map_rows(tape, mu, tangent, c);
    (z, tangent)
}

/// Row-wise wrapped-normal log-density given the arclength tangent of `z`
/// at the distribution's mean: `N(u | 0, diag(sigma^2))` in the tangent
/// space times the radial volume correction `(sqrt(c) d / sinh(sqrt(c) d))
/// ^ (n-1)` with `d = |u|`.
pub fn wrapped_log_density_rows(
    tape: &mut Tape,
    tangent: NodeId,
    sigma: NodeId,
    c: f64,
) -> NodeId {
    let n = tape.value(tangent).cols as f64;
    let w = tape.div(tangent, sigma);
    let w2 = tape.mul(w, w);
    let q = tape.sum_axis1(w2);
    let half_q = tape.mul_const(q, -0.5);
    let ln_sig = tape.ln(sigma);
    let ln_sig_sum = tape.sum_axis1(ln_sig);
    let gauss = {
        let t = tape.sub(half_q, ln_sig_sum);
        tape.add_const(t, -0.5 * n * (2.0 * std::f64::consts::PI).ln())
    };
    let d = tape.row_norm(tangent, 1e-12);
    let scd = tape.mul_const(d, c.sqrt());
    let corr = tape.ln_sinhc(scd);
    let corr = tape.mul_const(corr, n - 1.0);
    tape.sub(gauss, corr)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Standard Adam with bias correction. Parameters live in flat space;
/// manifold constraints are handled upstream by exp-map heads, never here.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Restore the step counter when resuming from a checkpoint.
    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(&mut self.v))
        {
            assert_eq!(p.shape(), g.shape(), "parameter/gradient shape mismatch");
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / b1t;
                let vh = v.data[i] / b2t;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

/// One probed coordinate that exceeded tolerance, for the report.
#[derive(Debug, Clone)]
pub struct GradIssue {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_err: f64,
    /// Worst probe per parameter tensor, `(name, rel_err)`.
    pub per_param: Vec<(String, f64)>,
    pub worst: Option<GradIssue>,
}

/// Compare tape gradients against central finite differences
/// `(f(p+h) - f(p-h)) / 2h` on `probes_per_tensor` random coordinates of
/// each named parameter. `build` must be a pure function of the parameter
/// values (freeze any sampling noise as constants inside it).
pub fn grad_check<F>(
    params: &[(String, Tensor)],
    build: F,
    h: f64,
    probes_per_tensor: usize,
    rng: &mut RandomState,
) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Tensor]) -> (Vec<NodeId>, NodeId),
{
    let values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut tape = Tape::new();
    let (leaves, root) = build(&mut tape, &values);
    assert_eq!(leaves.len(), params.len(), "one leaf per parameter");
    let grads = tape.backward(root);

    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let (_, root) = build(&mut tape, values);
        tape.value(root).data[0]
    };

    let mut report = GradCheckReport {
        probes: 0,
        max_rel_err: 0.0,
        per_param: Vec::new(),
        worst: None,
    };
    for (pi, (name, tensor)) in params.iter().enumerate() {
        let analytic = grads
            .get(leaves[pi])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tensor.rows, tensor.cols));
        let mut worst_here = 0.0_f64;
        for _ in 0..probes_per_tensor.min(tensor.len()) {
            let idx = rng.index(tensor.len());
            let mut plus = values.clone();
            plus[pi].data[idx] += h;
            let mut minus = values.clone();
            minus[pi].data[idx] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            report.probes += 1;
            if rel > worst_here {
                worst_here = rel;
            }
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some(GradIssue {
                    param: name.clone(),
                    index: idx,
                    analytic: a,
                    numeric,
                    rel_err: rel,
                });
            }
        }
        report.per_param.push((name.clone(), worst_here));
    }
    report
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"LCCK";
const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u16),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(&'static str),
}

/// Named tensors plus the bookkeeping needed to resume a run bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub seed: u64,
    pub step: u64,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Little-endian binary layout: magic, version, seed, step, tensor
    /// count, then per tensor `(name, rows, cols, f64 data)`.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&self.step.to_le_bytes());
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            buf.extend_from_slice(nb);
            buf.extend_from_slice(&(t.rows as u32).to_le_bytes());
            buf.extend_from_slice(&(t.cols as u32).to_le_bytes());
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut off = 0usize;
        let take = |off: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
            if *off + n > bytes.len() {
                return Err(CheckpointError::Corrupt("truncated"));
            }
            let s = &bytes[*off..*off + n];
            *off += n;
            Ok(s)
        };
        if take(&mut off, 4)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u16::from_le_bytes(take(&mut off, 2)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let seed = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
        let step = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
        let count = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(&mut off, 2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
                .map_err(|_| CheckpointError::Corrupt("tensor name not utf-8"))?;
            let rows = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
            let cols = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()));
            }
            tensors.push((name, Tensor::from_vec(rows, cols, data)));
        }
        if off != bytes.len() {
            return Err(CheckpointError::Corrupt("trailing bytes"));
        }
        Ok(Checkpoint {
            tensors,
            seed,
            step,
        })
    }
}
