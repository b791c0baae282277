//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every primitive evaluates eagerly and appends a node to the [`Tape`].
//! [`Tape::backward`] walks the nodes in reverse, accumulating adjoints, and
//! adds the adjoints of parameter leaves into the [`ParamStore`]'s gradient
//! buffers. A tape is single-use: build a fresh one per training step.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Transpose(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Recip(Var),
    ClampMin(Var, f64),
    SegmentSoftmax(Var, Rc<[usize]>),
    SoftmaxRows(Var),
    GatherRows(Var, Rc<[usize]>),
    ScatterAddRows(Var, Rc<[usize]>),
    MeanRows(Var),
    RowSum(Var),
    Sum(Var),
    SquaredError(Var, Var),
    LayerNorm(Var, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of executed primitives.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    consumed: bool,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// The current value of a stored parameter. Repeated calls for the same
    /// id return the same handle, so gradients from every use accumulate.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.param_vars.len() < store.len() {
            self.param_vars.resize(store.len(), None);
        }
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let v = self.push(store.get(id).clone_values(), Op::Param(id));
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = ta.matmul(tb).map_err(|_| shape_err("matmul", ta, tb))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (n, k2)) = (dims(ta), dims(tb));
        if k != k2 {
            return Err(shape_err("matmul_t", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            ta.values(),
            (k, 1),
            tb.values(),
            (1, k),
            &mut out,
            false,
        );
        Ok(self.push(Tensor::from_rows(m, n, out), Op::MatMulT(a, b)))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if dims(ta) != dims(tb) {
            return Err(shape_err(name, ta, tb));
        }
        let vals = ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let (r, c) = dims(ta);
        Ok(self.push(Tensor::from_rows(r, c, vals), op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `x + r` with `r` (1 × n) broadcast over rows.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.broadcast(x, r, true, false)
    }

    /// `x + c` with `c` (m × 1) broadcast over columns.
    pub fn add_col(&mut self, x: Var, c: Var) -> Result<Var> {
        self.broadcast(x, c, false, false)
    }

    /// `x ⊙ r` with `r` (1 × n) broadcast over rows.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.broadcast(x, r, true, true)
    }

    /// `x ⊙ c` with `c` (m × 1) broadcast over columns.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var> {
        self.broadcast(x, c, false, true)
    }

    fn broadcast(&mut self, x: Var, b: Var, row: bool, mul: bool) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (m, n) = dims(tx);
        let ok = if row {
            dims(tb) == (1, n)
        } else {
            dims(tb) == (m, 1)
        };
        let name = match (row, mul) {
            (true, false) => "add_row",
            (false, false) => "add_col",
            (true, true) => "mul_row",
            (false, true) => "mul_col",
        };
        if !ok {
            return Err(shape_err(name, tx, tb));
        }
        let bv = tb.values();
        let mut out = tx.values().to_vec();
        for i in 0..m {
            for j in 0..n {
                let o = &mut out[i * n + j];
                let s = if row { bv[j] } else { bv[i] };
                if mul {
                    *o *= s;
                } else {
                    *o += s;
                }
            }
        }
        let op = match (row, mul) {
            (true, false) => Op::AddRow(x, b),
            (false, false) => Op::AddCol(x, b),
            (true, true) => Op::MulRow(x, b),
            (false, true) => Op::MulCol(x, b),
        };
        Ok(self.push(Tensor::from_rows(m, n, out), op))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let (r, c) = dims(t);
        let vals = t.values().iter().map(|&v| f(v)).collect();
        self.push(Tensor::from_rows(r, c, vals), op)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.map(
            x,
            |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, libm::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if let Some((i, &v)) = t
            .values()
            .iter()
            .enumerate()
            .find(|(_, &v)| v <= 0.0 || v.is_nan())
        {
            return Err(Error::NonPositiveLog {
                op: "log",
                index: i,
                value: v,
            });
        }
        Ok(self.map(x, libm::log, Op::Log(x)))
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.map(x, |v| 1.0 / v, Op::Recip(x))
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        self.map(
            x,
            |v| if v > floor { v } else { floor },
            Op::ClampMin(x, floor),
        )
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::hcat(&tensors)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = dims(t);
        if start > end || end > n {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: t.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&t.row(i)[start..end]);
        }
        Ok(self.push(Tensor::from_rows(m, w, out), Op::SliceCols(x, start)))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let t = self.value(x).transpose();
        self.push(t, Op::Transpose(x))
    }

    /// Softmax over the rows sharing a segment id, independently per column.
    pub fn segment_softmax(
        &mut self,
        x: Var,
        segments: Rc<[usize]>,
        n_segments: usize,
    ) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = dims(t);
        if segments.len() != m || segments.iter().any(|&s| s >= n_segments) {
            return Err(Error::Shape {
                op: "segment_softmax",
                lhs: t.shape().to_vec(),
                rhs: vec![segments.len(), n_segments],
            });
        }
        let mut max = vec![f64::NEG_INFINITY; n_segments * n];
        for (i, &s) in segments.iter().enumerate() {
            for j in 0..n {
                let v = t.values()[i * n + j];
                if v > max[s * n + j] {
                    max[s * n + j] = v;
                }
            }
        }
        let mut out = vec![0.0; m * n];
        let mut denom = vec![0.0; n_segments * n];
        for (i, &s) in segments.iter().enumerate() {
            for j in 0..n {
                let e = libm::exp(t.values()[i * n + j] - max[s * n + j]);
                out[i * n + j] = e;
                denom[s * n + j] += e;
            }
        }
        for (i, &s) in segments.iter().enumerate() {
            for j in 0..n {
                out[i * n + j] /= denom[s * n + j];
            }
        }
        Ok(self.push(
            Tensor::from_rows(m, n, out),
            Op::SegmentSoftmax(x, segments),
        ))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (m, n) = dims(t);
        let mut out = t.values().to_vec();
        for row in out.chunks_mut(n.max(1)).take(m) {
            softmax_in_place(row);
        }
        self.push(Tensor::from_rows(m, n, out), Op::SoftmaxRows(x))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Rc<[usize]>) -> Result<Var> {
        let t = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![bad],
            });
        }
        let out = t.select_rows(&idx);
        Ok(self.push(out, Op::GatherRows(x, idx)))
    }

    /// Row `i` of `x` is added into row `idx[i]` of an `n_rows`-row result.
    pub fn scatter_add_rows(&mut self, x: Var, idx: Rc<[usize]>, n_rows: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = dims(t);
        if idx.len() != m || idx.iter().any(|&i| i >= n_rows) {
            return Err(Error::Shape {
                op: "scatter_add_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![idx.len(), n_rows],
            });
        }
        let mut out = vec![0.0; n_rows * n];
        for (i, &dst) in idx.iter().enumerate() {
            for j in 0..n {
                out[dst * n + j] += t.values()[i * n + j];
            }
        }
        Ok(self.push(
            Tensor::from_rows(n_rows, n, out),
            Op::ScatterAddRows(x, idx),
        ))
    }

    /// Column means: `m × n → 1 × n`.
    pub fn mean_over_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (m, n) = dims(t);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += t.values()[i * n + j];
            }
        }
        let inv = if m > 0 { 1.0 / m as f64 } else { 0.0 };
        out.iter_mut().for_each(|v| *v *= inv);
        self.push(Tensor::from_rows(1, n, out), Op::MeanRows(x))
    }

    /// Row sums: `m × n → m × 1`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.rows();
        let out = (0..m).map(|i| t.row(i).iter().sum()).collect();
        self.push(Tensor::from_rows(m, 1, out), Op::RowSum(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// `Σ (a − b)²` as a scalar.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if dims(ta) != dims(tb) {
            return Err(shape_err("squared_error", ta, tb));
        }
        let s = ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::SquaredError(a, b)))
    }

    /// Per-row standardization `(x − μ) / sqrt(σ² + eps)`, no affine part.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let t = self.value(x);
        let (m, n) = dims(t);
        let mut out = t.values().to_vec();
        for row in out.chunks_mut(n.max(1)).take(m) {
            let (mu, inv) = row_stats(row, eps);
            row.iter_mut().for_each(|v| *v = (*v - mu) * inv);
        }
        self.push(Tensor::from_rows(m, n, out), Op::LayerNorm(x, eps))
    }

    /// Sign pattern of every kink-bearing primitive's input, in tape order.
    /// Finite-difference checks compare it to detect kink crossings.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) | Op::LeakyRelu(x, _) => {
                    sig.extend(self.value(*x).values().iter().map(|&v| v > 0.0));
                }
                Op::ClampMin(x, floor) => {
                    sig.extend(self.value(*x).values().iter().map(|&v| v > *floor));
                }
                _ => {}
            }
        }
        sig
    }

    /// Reverse pass from a `1 × 1` loss. Every parameter in `store` ends up
    /// with a gradient buffer (zero if unreachable); reachable ones have the
    /// loss derivative added to whatever they already held.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NotScalar(lt.shape().to_vec()));
        }
        self.consumed = true;
        store.ensure_grads();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads, store);
        }
        Ok(())
    }

    fn propagate(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        store: &mut ParamStore,
    ) {
        let y = &node.value;
        let (m, n) = dims(y);
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => store.accumulate_grad(*id, g),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let k = ta.cols();
                // dA = G · Bᵀ ; dB = Aᵀ · G
                gemm(
                    m,
                    n,
                    k,
                    g,
                    (n, 1),
                    tb.values(),
                    (1, n),
                    acc(grads, *a, m * k),
                    true,
                );
                gemm(
                    k,
                    m,
                    n,
                    ta.values(),
                    (1, k),
                    g,
                    (n, 1),
                    acc(grads, *b, k * n),
                    true,
                );
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let k = ta.cols();
                // y = A Bᵀ: dA = G · B ; dB = Gᵀ · A
                gemm(
                    m,
                    n,
                    k,
                    g,
                    (n, 1),
                    tb.values(),
                    (k, 1),
                    acc(grads, *a, m * k),
                    true,
                );
                gemm(
                    n,
                    m,
                    k,
                    g,
                    (1, n),
                    ta.values(),
                    (k, 1),
                    acc(grads, *b, n * k),
                    true,
                );
            }
            Op::Add(a, b) => {
                add_into(acc(grads, *a, g.len()), g, 1.0);
                add_into(acc(grads, *b, g.len()), g, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(acc(grads, *a, g.len()), g, 1.0);
                add_into(acc(grads, *b, g.len()), g, -1.0);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).values(), self.value(*b).values());
                let da = acc(grads, *a, g.len());
                for k in 0..g.len() {
                    da[k] += g[k] * vb[k];
                }
                let db = acc(grads, *b, g.len());
                for k in 0..g.len() {
                    db[k] += g[k] * va[k];
                }
            }
            Op::AddRow(x, r) => {
                add_into(acc(grads, *x, g.len()), g, 1.0);
                let dr = acc(grads, *r, n);
                for i in 0..m {
                    for j in 0..n {
                        dr[j] += g[i * n + j];
                    }
                }
            }
            Op::AddCol(x, c) => {
                add_into(acc(grads, *x, g.len()), g, 1.0);
                let dc = acc(grads, *c, m);
                for i in 0..m {
                    dc[i] += g[i * n..(i + 1) * n].iter().sum::<f64>();
                }
            }
            Op::MulRow(x, r) => {
                let (vx, vr) = (self.value(*x).values(), self.value(*r).values());
                let dx = acc(grads, *x, g.len());
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] += g[i * n + j] * vr[j];
                    }
                }
                let dr = acc(grads, *r, n);
                for i in 0..m {
                    for j in 0..n {
                        dr[j] += g[i * n + j] * vx[i * n + j];
                    }
                }
            }
            Op::MulCol(x, c) => {
                let (vx, vc) = (self.value(*x).values(), self.value(*c).values());
                let dx = acc(grads, *x, g.len());
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] += g[i * n + j] * vc[i];
                    }
                }
                let dc = acc(grads, *c, m);
                for i in 0..m {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += g[i * n + j] * vx[i * n + j];
                    }
                    dc[i] += s;
                }
            }
            Op::Scale(x, s) => add_into(acc(grads, *x, g.len()), g, *s),
            Op::AddScalar(x) => add_into(acc(grads, *x, g.len()), g, 1.0),
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    let dp = acc(grads, *p, m * w);
                    for i in 0..m {
                        for j in 0..w {
                            dp[i * w + j] += g[i * n + offset + j];
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let w = self.value(*x).cols();
                let dx = acc(grads, *x, m * w);
                for i in 0..m {
                    for j in 0..n {
                        dx[i * w + start + j] += g[i * n + j];
                    }
                }
            }
            Op::Transpose(x) => {
                // y is m × n, x is n × m
                let dx = acc(grads, *x, m * n);
                for i in 0..m {
                    for j in 0..n {
                        dx[j * m + i] += g[i * n + j];
                    }
                }
            }
            Op::Relu(x) => {
                let vx = self.value(*x).values();
                let dx = acc(grads, *x, g.len());
                for k in 0..g.len() {
                    if vx[k] > 0.0 {
                        dx[k] += g[k];
                    }
                }
            }
            Op::LeakyRelu(x, slope) => {
                let vx = self.value(*x).values();
                let dx = acc(grads, *x, g.len());
                for k in 0..g.len() {
                    dx[k] += if vx[k] > 0.0 { g[k] } else { slope * g[k] };
                }
            }
            Op::ClampMin(x, floor) => {
                let vx = self.value(*x).values();
                let dx = acc(grads, *x, g.len());
                for k in 0..g.len() {
                    if vx[k] > *floor {
                        dx[k] += g[k];
                    }
                }
            }
            Op::Sigmoid(x) => {
                let vy = y.values();
                let dx = acc(grads, *x, g.len());
                for k in 0..g.len() {
                    dx[k] += g[k] * vy[k] * (1.0 - vy[k]);
                }
            }
            Op::Exp(x) => {
                let vy = y.values();
                let dx = acc(grads, *x, g.len());
                for k in 0..g.len() {
                    dx[k] += g[k] * vy[k];
                }
            }
            Op::Log(x) => {
                let vx = self.value(*x).values();
                let dx = acc(grads, *x, g.len());
                for k in 0..g.len() {
                    dx[k] += g[k] / vx[k];
                }
            }
            Op::Recip(x) => {
                let vy = y.values();
                let dx = acc(grads, *x, g.len());
                for k in 0..g.len() {
                    dx[k] -= g[k] * vy[k] * vy[k];
                }
            }
            Op::SegmentSoftmax(x, segments) => {
                let vy = y.values();
                let n_seg = segments.iter().copied().max().map_or(0, |s| s + 1);
                let mut dot = vec![0.0; n_seg * n];
                for (i, &s) in segments.iter().enumerate() {
                    for j in 0..n {
                        dot[s * n + j] += g[i * n + j] * vy[i * n + j];
                    }
                }
                let dx = acc(grads, *x, g.len());
                for (i, &s) in segments.iter().enumerate() {
                    for j in 0..n {
                        let k = i * n + j;
                        dx[k] += vy[k] * (g[k] - dot[s * n + j]);
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let vy = y.values();
                let dx = acc(grads, *x, g.len());
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    let dot: f64 = g[r.clone()]
                        .iter()
                        .zip(&vy[r.clone()])
                        .map(|(a, b)| a * b)
                        .sum();
                    for k in r {
                        dx[k] += vy[k] * (g[k] - dot);
                    }
                }
            }
            Op::GatherRows(x, idx) => {
                let rows = self.value(*x).rows();
                let dx = acc(grads, *x, rows * n);
                for (i, &src) in idx.iter().enumerate() {
                    for j in 0..n {
                        dx[src * n + j] += g[i * n + j];
                    }
                }
            }
            Op::ScatterAddRows(x, idx) => {
                let dx = acc(grads, *x, idx.len() * n);
                for (i, &dst) in idx.iter().enumerate() {
                    for j in 0..n {
                        dx[i * n + j] += g[dst * n + j];
                    }
                }
            }
            Op::MeanRows(x) => {
                let rows = self.value(*x).rows();
                let inv = if rows > 0 { 1.0 / rows as f64 } else { 0.0 };
                let dx = acc(grads, *x, rows * n);
                for i in 0..rows {
                    for j in 0..n {
                        dx[i * n + j] += g[j] * inv;
                    }
                }
            }
            Op::RowSum(x) => {
                let w = self.value(*x).cols();
                let dx = acc(grads, *x, m * w);
                for i in 0..m {
                    for j in 0..w {
                        dx[i * w + j] += g[i];
                    }
                }
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                let dx = acc(grads, *x, len);
                dx.iter_mut().for_each(|v| *v += g[0]);
            }
            Op::SquaredError(a, b) => {
                let (va, vb) = (self.value(*a).values(), self.value(*b).values());
                let len = va.len();
                let da = acc(grads, *a, len);
                for k in 0..len {
                    da[k] += 2.0 * g[0] * (va[k] - vb[k]);
                }
                let db = acc(grads, *b, len);
                for k in 0..len {
                    db[k] -= 2.0 * g[0] * (va[k] - vb[k]);
                }
            }
            Op::LayerNorm(x, eps) => {
                let vx = self.value(*x).values();
                let vy = y.values();
                let dx = acc(grads, *x, g.len());
                let nf = n as f64;
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    let (_, inv) = row_stats(&vx[r.clone()], *eps);
                    let gm: f64 = g[r.clone()].iter().sum::<f64>() / nf;
                    let gy: f64 = g[r.clone()]
                        .iter()
                        .zip(&vy[r.clone()])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / nf;
                    for k in r {
                        dx[k] += inv * (g[k] - gm - vy[k] * gy);
                    }
                }
            }
        }
    }
}

impl Tensor {
    pub(crate) fn clone_values(&self) -> Tensor {
        Tensor::new(self.shape().to_vec(), self.values().to_vec()).expect("same shape")
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, x) in dst.iter_mut().zip(src) {
        *d += s * x;
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len().max(1) as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, 1.0 / libm::sqrt(var + eps))
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::exp(-v))
    } else {
        let e = libm::exp(v);
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}
