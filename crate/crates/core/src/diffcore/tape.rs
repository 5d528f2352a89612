//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its forward value. [`Tape::backward`]
//! walks the nodes in reverse and accumulates adjoints; adjoints reaching
//! parameter leaves are added into the [`ParamStore`] gradients.
//!
//! All tape values are matrices. Rank-0 and rank-1 constants are viewed as
//! `1 × 1` and `1 × n`.

use std::collections::HashMap;

use super::param::{ParamId, ParamStore};
use super::tensor::{gemm, Layout, Tensor};
use crate::error::{dim_err, Error, Result};

/// Probability clamp used by [`Tape::bce`].
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    SymNormalize(Var),
    BlockLeftMul(Var, Var),
    Scatter(Var, Vec<(usize, usize, f64)>),
    Bce(Var, Vec<f64>),
    Mse(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn as_matrix(t: Tensor) -> Result<Tensor> {
    let (r, c) = t.dims2()?;
    t.reshape(vec![r, c])
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(value.shape().len(), 2);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let s = self.nodes[v.0].value.shape();
        (s[0], s[1])
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        let t = as_matrix(t)?;
        Ok(self.push(t, Op::Constant, false))
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let t = as_matrix(store.get(id).value.clone())?;
        let v = self.push(t, Op::Param(id), true);
        self.params.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return dim_err(format!("matmul {m}x{k} by {k2}x{n}"));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            Layout::Normal,
            self.value(b).data(),
            Layout::Normal,
            &mut out,
            false,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), ng))
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return dim_err(format!("{what}: {:?} vs {:?}", self.dims(a), self.dims(b)));
        }
        let (r, c) = self.dims(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(r, c, data)?, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(row) != (1, c) {
            return dim_err(format!("add_row: {r}x{c} plus {:?}", self.dims(row)));
        }
        let mut data = self.value(a).data().to_vec();
        let bias = self.value(row).data();
        for chunk in data.chunks_mut(c.max(1)) {
            for (x, b) in chunk.iter_mut().zip(bias) {
                *x += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::AddRow(a, row), ng))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(value, op, ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let s = self.value(a).mean();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    pub fn slice_rows(&mut self, a: Var, r0: usize, r1: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        let t = self.value(a).block(r0, r1, 0, c).map_err(|_| {
            Error::Dimension(format!("slice_rows {r0}..{r1} of {r}x{c}"))
        })?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::SliceRows(a, r0), ng))
    }

    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        let t = self.value(a).block(0, r, c0, c1).map_err(|_| {
            Error::Dimension(format!("slice_cols {c0}..{c1} of {r}x{c}"))
        })?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::SliceCols(a, c0), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return dim_err("concat_rows of nothing");
        };
        let c = self.dims(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pc != c {
                return dim_err(format!("concat_rows: {pc} columns, expected {c}"));
            }
            rows += pr;
            data.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(rows, c, data)?, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return dim_err("concat_cols of nothing");
        };
        let r = self.dims(first).0;
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pr != r {
                return dim_err(format!("concat_cols: {pr} rows, expected {r}"));
            }
            cols += pc;
        }
        let mut data = Vec::with_capacity(r * cols);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(r, cols, data)?, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Row `i` of the output is row `idx[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let (r, c) = self.dims(a);
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            if i >= r {
                return dim_err(format!("gather_rows: index {i} out of {r} rows"));
            }
            data.extend_from_slice(self.value(a).row_slice(i));
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(idx.len(), c, data)?, Op::GatherRows(a, idx), ng))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(a).clone().reshape(vec![rows, cols])?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Reshape(a), ng))
    }

    /// `D^{-1/2} M D^{-1/2}` with `D` the row sums of `M`; rows whose sum is
    /// not positive come out as zero rows.
    pub fn sym_normalize(&mut self, m: Var) -> Result<Var> {
        let (r, c) = self.dims(m);
        if r != c {
            return dim_err(format!("sym_normalize needs a square matrix, got {r}x{c}"));
        }
        let (out, _) = sym_normalize_values(self.value(m));
        let ng = self.ng(m);
        Ok(self.push(out, Op::SymNormalize(m), ng))
    }

    /// `a` is `n × n`, `h` stacks `b` blocks of `n × d`; block `i` of the
    /// output is `a · h_i`.
    pub fn block_left_mul(&mut self, a: Var, h: Var) -> Result<Var> {
        let (n, n2) = self.dims(a);
        let (rows, d) = self.dims(h);
        if n != n2 || n == 0 || rows % n != 0 {
            return dim_err(format!("block_left_mul: {n}x{n2} with {rows}x{d}"));
        }
        let mut out = vec![0.0; rows * d];
        let av = self.value(a).data();
        let hv = self.value(h).data();
        for (hb, ob) in hv.chunks(n * d).zip(out.chunks_mut(n * d)) {
            gemm(n, n, d, av, Layout::Normal, hb, Layout::Normal, ob, false);
        }
        let ng = self.ng(a) || self.ng(h);
        Ok(self.push(Tensor::matrix(rows, d, out)?, Op::BlockLeftMul(a, h), ng))
    }

    /// Sparse linear map into a fresh `rows × cols` matrix:
    /// `out[dst] = base[dst] + Σ coeff · input[src]` over flat indices.
    pub fn scatter(
        &mut self,
        input: Var,
        rows: usize,
        cols: usize,
        base: Vec<f64>,
        terms: Vec<(usize, usize, f64)>,
    ) -> Result<Var> {
        if base.len() != rows * cols {
            return dim_err("scatter: base length differs from output size");
        }
        let src = self.value(input).data();
        let mut out = base;
        for &(s, d, coeff) in &terms {
            if s >= src.len() || d >= out.len() {
                return dim_err(format!("scatter: term ({s}, {d}) out of range"));
            }
            out[d] += coeff * src[s];
        }
        let ng = self.ng(input);
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::Scatter(input, terms), ng))
    }

    /// Mean binary cross-entropy against fixed 0/1 labels, with
    /// probabilities clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce(&mut self, probs: Var, labels: &Tensor) -> Result<Var> {
        let p = self.value(probs);
        if p.len() != labels.len() {
            return dim_err(format!("bce: {} probabilities, {} labels", p.len(), labels.len()));
        }
        let loss = bce_value(p.data(), labels.data());
        let ng = self.ng(probs);
        Ok(self.push(Tensor::scalar(loss), Op::Bce(probs, labels.data().to_vec()), ng))
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return dim_err(format!("mse: {:?} vs {:?}", self.dims(a), self.dims(b)));
        }
        let loss = mse_value(self.value(a).data(), self.value(b).data());
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(a, b), ng))
    }

    /// Accumulates `∂loss/∂θ` into the gradient of every parameter that
    /// participated in `loss`. Gradients are added to whatever the store
    /// already holds; call [`ParamStore::zero_grad`] between steps.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::filled(&[1, 1], 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            if let Op::Param(id) = node.op {
                let p = store.get_mut(id);
                for (acc, x) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *acc += x;
                }
            }
        }
        Ok(())
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut Tensor> {
        if !self.ng(v) {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)))
    }

    fn acc_scaled(&self, grads: &mut [Option<Tensor>], v: Var, g: &[f64], s: f64) {
        if let Some(buf) = self.slot(grads, v) {
            for (a, x) in buf.data_mut().iter_mut().zip(g) {
                *a += s * x;
            }
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            &Op::MatMul(a, b) => {
                let (m, k) = self.dims(a);
                let n = self.dims(b).1;
                if let Some(da) = self.slot(grads, a) {
                    let bv = self.value(b).data();
                    gemm(m, n, k, gd, Layout::Normal, bv, Layout::Transposed, da.data_mut(), true);
                }
                if let Some(db) = self.slot(grads, b) {
                    let av = self.value(a).data();
                    gemm(k, m, n, av, Layout::Transposed, gd, Layout::Normal, db.data_mut(), true);
                }
            }
            &Op::Add(a, b) => {
                self.acc_scaled(grads, a, gd, 1.0);
                self.acc_scaled(grads, b, gd, 1.0);
            }
            &Op::Sub(a, b) => {
                self.acc_scaled(grads, a, gd, 1.0);
                self.acc_scaled(grads, b, gd, -1.0);
            }
            &Op::Mul(a, b) => {
                if let Some(da) = self.slot(grads, a) {
                    let bv = self.value(b).data();
                    for ((acc, x), y) in da.data_mut().iter_mut().zip(gd).zip(bv) {
                        *acc += x * y;
                    }
                }
                if let Some(db) = self.slot(grads, b) {
                    let av = self.value(a).data();
                    for ((acc, x), y) in db.data_mut().iter_mut().zip(gd).zip(av) {
                        *acc += x * y;
                    }
                }
            }
            &Op::AddRow(a, row) => {
                self.acc_scaled(grads, a, gd, 1.0);
                let c = self.dims(a).1.max(1);
                if let Some(dr) = self.slot(grads, row) {
                    let dr = dr.data_mut();
                    for chunk in gd.chunks(c) {
                        for (acc, x) in dr.iter_mut().zip(chunk) {
                            *acc += x;
                        }
                    }
                }
            }
            &Op::Scale(a, s) => self.acc_scaled(grads, a, gd, s),
            &Op::AddScalar(a) => self.acc_scaled(grads, a, gd, 1.0),
            &Op::Exp(a) => {
                let out = node.value.data();
                if let Some(da) = self.slot(grads, a) {
                    for ((acc, x), y) in da.data_mut().iter_mut().zip(gd).zip(out) {
                        *acc += x * y;
                    }
                }
            }
            &Op::Relu(a) => {
                let out = node.value.data();
                if let Some(da) = self.slot(grads, a) {
                    for ((acc, x), y) in da.data_mut().iter_mut().zip(gd).zip(out) {
                        if *y > 0.0 {
                            *acc += x;
                        }
                    }
                }
            }
            &Op::Sigmoid(a) => {
                let out = node.value.data();
                if let Some(da) = self.slot(grads, a) {
                    for ((acc, x), y) in da.data_mut().iter_mut().zip(gd).zip(out) {
                        *acc += x * y * (1.0 - y);
                    }
                }
            }
            &Op::Sum(a) => {
                if let Some(da) = self.slot(grads, a) {
                    da.data_mut().iter_mut().for_each(|acc| *acc += gd[0]);
                }
            }
            &Op::Mean(a) => {
                if let Some(da) = self.slot(grads, a) {
                    let s = gd[0] / da.len().max(1) as f64;
                    da.data_mut().iter_mut().for_each(|acc| *acc += s);
                }
            }
            &Op::SliceRows(a, r0) => {
                let c = self.dims(a).1;
                if let Some(da) = self.slot(grads, a) {
                    let dst = &mut da.data_mut()[r0 * c..r0 * c + gd.len()];
                    for (acc, x) in dst.iter_mut().zip(gd) {
                        *acc += x;
                    }
                }
            }
            &Op::SliceCols(a, c0) => {
                let c = self.dims(a).1;
                let (r, w) = (node.value.shape()[0], node.value.shape()[1]);
                if let Some(da) = self.slot(grads, a) {
                    let dd = da.data_mut();
                    for i in 0..r {
                        for j in 0..w {
                            dd[i * c + c0 + j] += gd[i * w + j];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.acc_scaled(grads, p, &gd[off..off + n], 1.0);
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let mut c_off = 0;
                for &p in parts {
                    let (r, w) = self.dims(p);
                    if let Some(dp) = self.slot(grads, p) {
                        let dd = dp.data_mut();
                        for i in 0..r {
                            for j in 0..w {
                                dd[i * w + j] += gd[i * total + c_off + j];
                            }
                        }
                    }
                    c_off += w;
                }
            }
            Op::GatherRows(a, idx) => {
                let c = self.dims(*a).1;
                if let Some(da) = self.slot(grads, *a) {
                    let dd = da.data_mut();
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            dd[i * c + j] += gd[k * c + j];
                        }
                    }
                }
            }
            &Op::Reshape(a) => self.acc_scaled(grads, a, gd, 1.0),
            &Op::SymNormalize(m) => {
                let mv = self.value(m);
                let n = mv.shape()[0];
                let (_, r) = sym_normalize_values(mv);
                let md = mv.data();
                // dL/dd_i over the row-sum degree of node i
                let mut gdeg = vec![0.0; n];
                for i in 0..n {
                    for j in 0..n {
                        let t = gd[i * n + j] * md[i * n + j];
                        gdeg[i] += t * r[j];
                        gdeg[j] += t * r[i];
                    }
                }
                for i in 0..n {
                    gdeg[i] *= -0.5 * r[i].powi(3);
                }
                if let Some(dm) = self.slot(grads, m) {
                    let dd = dm.data_mut();
                    for i in 0..n {
                        for j in 0..n {
                            dd[i * n + j] += gd[i * n + j] * r[i] * r[j] + gdeg[i];
                        }
                    }
                }
            }
            &Op::BlockLeftMul(a, h) => {
                let n = self.dims(a).0;
                let d = self.dims(h).1;
                let av = self.value(a).data();
                let hv = self.value(h).data();
                if let Some(dh) = self.slot(grads, h) {
                    for (gb, db) in gd.chunks(n * d).zip(dh.data_mut().chunks_mut(n * d)) {
                        gemm(n, n, d, av, Layout::Transposed, gb, Layout::Normal, db, true);
                    }
                }
                if let Some(da) = self.slot(grads, a) {
                    let dd = da.data_mut();
                    for (gb, hb) in gd.chunks(n * d).zip(hv.chunks(n * d)) {
                        gemm(n, d, n, gb, Layout::Normal, hb, Layout::Transposed, dd, true);
                    }
                }
            }
            Op::Scatter(input, terms) => {
                if let Some(di) = self.slot(grads, *input) {
                    let dd = di.data_mut();
                    for &(s, d, coeff) in terms {
                        dd[s] += coeff * gd[d];
                    }
                }
            }
            Op::Bce(p, labels) => {
                let pv = self.value(*p).data();
                let n = pv.len().max(1) as f64;
                if let Some(dp) = self.slot(grads, *p) {
                    for ((acc, &x), &y) in dp.data_mut().iter_mut().zip(pv).zip(labels) {
                        if x > BCE_EPS && x < 1.0 - BCE_EPS {
                            *acc += gd[0] * -(y / x - (1.0 - y) / (1.0 - x)) / n;
                        }
                    }
                }
            }
            &Op::Mse(a, b) => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let s = 2.0 * gd[0] / av.len().max(1) as f64;
                let diff: Vec<f64> = av.iter().zip(bv).map(|(x, y)| x - y).collect();
                self.acc_scaled(grads, a, &diff, s);
                self.acc_scaled(grads, b, &diff, -s);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn bce_value(p: &[f64], y: &[f64]) -> f64 {
    let n = p.len().max(1) as f64;
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            (1.0 - y) * (1.0 - p).ln() + y * p.ln()
        })
        .sum();
    -total / n
}

pub(crate) fn mse_value(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n
}

/// Returns the normalized matrix and the per-row `d^{-1/2}` factors.
pub(crate) fn sym_normalize_values(m: &Tensor) -> (Tensor, Vec<f64>) {
    let n = m.shape()[0];
    let md = m.data();
    let r: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = md[i * n..(i + 1) * n].iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = r[i] * md[i * n + j] * r[j];
        }
    }
    (Tensor::matrix(n, n, out).expect("square"), r)
}
