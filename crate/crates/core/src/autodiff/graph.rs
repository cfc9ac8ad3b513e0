use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{AutodiffError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Handle to a named parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Owns every trainable tensor of a model. Graphs snapshot parameter values
/// when a parameter is first loaded into them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<(), AutodiffError> {
        let slot = &mut self.params[id.0];
        if slot.value.shape() != value.shape() {
            return Err(AutodiffError::Shape(format!(
                "parameter {} has shape {:?}, got {:?}",
                slot.name,
                slot.value.shape(),
                value.shape()
            )));
        }
        slot.value = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Scalar,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Bcast, Var, Bcast),
    Sub(Var, Bcast, Var, Bcast),
    Mul(Var, Bcast, Var, Bcast),
    Square(Var),
    Mean(Var),
    Sum(Var),
    Log(Var),
    Exp(Var),
    Sigmoid(Var),
    Softplus(Var),
    Elu(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Affine(Var, f64),
    Clamp(Var, f64, f64),
    SelectRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Define-by-run tape of tensor operations.
///
/// Nodes are appended in evaluation order, so parents always precede their
/// children and a reverse sweep is a valid topological order.
///
/// Broadcasting for `add`, `sub` and `mul`: operands of equal shape combine
/// elementwise; a single-element operand broadcasts to the other's shape; a
/// `1×k` (or length-`k`) operand broadcasts across the rows of an `n×k` one.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Result of [`Graph::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    leaves: HashMap<Var, Tensor>,
    params: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    /// Gradient for a non-parameter leaf created with `requires_grad`.
    pub fn leaf(&self, var: Var) -> Option<&Tensor> {
        self.leaves.get(&var)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every node so the graph can be rebuilt.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.param_vars.clear();
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn checked(&mut self, name: &str, value: Tensor, op: Op, rg: bool) -> Result<Var, AutodiffError> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite(name.to_string()));
        }
        Ok(self.push(value, op, rg))
    }

    /// Leaf holding data that is not differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::leaf`].
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Loads a parameter as a differentiable leaf. Repeated loads of the same
    /// parameter return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        self.param_vars.insert(id, v);
        v
    }

    /// Loads a parameter's current value as a constant (no gradient flows).
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.constant(store.get(id).clone())
    }

    /// Copies a node's value into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(AutodiffError::Shape(format!(
                "matmul {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, 0.0);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.checked("matmul", Tensor::from_raw(vec![m, n], out), Op::MatMul(a, b), rg)
    }

    fn broadcast(&self, name: &str, a: Var, b: Var) -> Result<(Vec<usize>, Bcast, Bcast), AutodiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            return Ok((sa.to_vec(), Bcast::Same, Bcast::Same));
        }
        let (na, nb) = (self.value(a).numel(), self.value(b).numel());
        if nb == 1 {
            return Ok((sa.to_vec(), Bcast::Same, Bcast::Scalar));
        }
        if na == 1 {
            return Ok((sb.to_vec(), Bcast::Scalar, Bcast::Same));
        }
        let is_row = |s: &[usize], full: &[usize]| {
            full.len() == 2 && ((s.len() == 2 && s[0] == 1 && s[1] == full[1]) || (s.len() == 1 && s[0] == full[1]))
        };
        if is_row(sb, sa) {
            return Ok((sa.to_vec(), Bcast::Same, Bcast::Row));
        }
        if is_row(sa, sb) {
            return Ok((sb.to_vec(), Bcast::Row, Bcast::Same));
        }
        Err(AutodiffError::Shape(format!("{name} {sa:?} with {sb:?}")))
    }

    fn binary(
        &mut self,
        name: &str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(Var, Bcast, Var, Bcast) -> Op,
    ) -> Result<Var, AutodiffError> {
        let (shape, ba, bb) = self.broadcast(name, a, b)?;
        let numel: usize = shape.iter().product();
        let cols = if shape.len() == 2 { shape[1] } else { numel.max(1) };
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let at = |d: &[f64], bc: Bcast, i: usize| match bc {
            Bcast::Same => d[i],
            Bcast::Row => d[i % cols],
            Bcast::Scalar => d[0],
        };
        let out: Vec<f64> = (0..numel).map(|i| f(at(da, ba, i), at(db, bb, i))).collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.checked(name, Tensor::from_raw(shape, out), make(a, ba, b, bb), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn unary(&mut self, name: &str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        let out: Vec<f64> = t.data().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        let rg = self.requires_grad(x);
        self.checked(name, Tensor::from_raw(shape, out), op, rg)
    }

    pub fn square(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary("square", x, |v| v * v, Op::Square(x))
    }

    /// Natural log; any entry ≤ 0 is a domain error.
    pub fn log(&mut self, x: Var) -> Result<Var, AutodiffError> {
        if let Some(bad) = self.value(x).data().iter().find(|&&v| v <= 0.0) {
            return Err(AutodiffError::Domain(format!("log of {bad}")));
        }
        self.unary("log", x, f64::ln, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary("softplus", x, softplus, Op::Softplus(x))
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary("elu", x, |v| if v > 0.0 { v } else { v.exp_m1() }, Op::Elu(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var, AutodiffError> {
        self.unary("affine", x, |v| scale * v + shift, Op::Affine(x, scale))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.affine(x, -1.0, 0.0)
    }

    /// Elementwise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, AutodiffError> {
        if lo > hi {
            return Err(AutodiffError::Contract(format!("clamp bounds {lo} > {hi}")));
        }
        self.unary("clamp", x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(AutodiffError::Shape("mean of empty tensor".into()));
        }
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.requires_grad(x);
        self.checked("mean", Tensor::from_raw(Vec::new(), vec![m]), Op::Mean(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.value(x).data().iter().sum::<f64>();
        let rg = self.requires_grad(x);
        self.checked("sum", Tensor::from_raw(Vec::new(), vec![s]), Op::Sum(x), rg)
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::Shape("concat of nothing".into()))?;
        let rows = self.value(*first).rows();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.rows() != rows {
                return Err(AutodiffError::Shape(format!("concat part with shape {:?}", t.shape())));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        self.checked("concat", Tensor::from_raw(vec![rows, total], out), Op::Concat(parts.to_vec()), rg)
    }

    /// Gathers rows of a matrix (indices may repeat).
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(AutodiffError::Shape(format!("select_rows on {:?}", t.shape())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(AutodiffError::Shape(format!("row {bad} out of {}", t.rows())));
        }
        let out = t.select_rows(idx);
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::SelectRows(x, idx.to_vec()), rg))
    }

    /// Reverse sweep from a single-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        let rt = self.value(root);
        if !rt.is_scalar() {
            return Err(AutodiffError::Contract(format!(
                "backward from non-scalar root of shape {:?}",
                rt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }

        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let g = grads[i]
                .take()
                .unwrap_or_else(|| vec![0.0; node.value.numel()]);
            let t = Tensor::from_raw(node.value.shape().to_vec(), g);
            if !t.all_finite() {
                return Err(AutodiffError::NonFinite("backward".into()));
            }
            match node.param {
                Some(id) => {
                    out.params.insert(id, t);
                }
                None => {
                    out.leaves.insert(Var(i), t);
                }
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(delta),
        }
    }

    fn reduce(&self, g: &[f64], target: Var, bc: Bcast, out_cols: usize) -> Vec<f64> {
        match bc {
            Bcast::Same => g.to_vec(),
            Bcast::Scalar => vec![g.iter().sum()],
            Bcast::Row => {
                let mut r = vec![0.0; self.value(target).numel()];
                for (i, v) in g.iter().enumerate() {
                    r[i % out_cols] += v;
                }
                r
            }
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let out_cols = node.value.cols();
        let elementwise = |x: Var, f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            let xv = self.value(x).data();
            g.iter().zip(xv).zip(out).map(|((&gi, &xi), &yi)| gi * f(xi, yi)).collect()
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, tb.data(), true, &mut da, 0.0);
                    self.accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g, false, &mut db, 0.0);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, ba, b, bb) => {
                let da = self.reduce(g, *a, *ba, out_cols);
                self.accumulate(grads, *a, da);
                let db = self.reduce(g, *b, *bb, out_cols);
                self.accumulate(grads, *b, db);
            }
            Op::Sub(a, ba, b, bb) => {
                let da = self.reduce(g, *a, *ba, out_cols);
                self.accumulate(grads, *a, da);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                let db = self.reduce(&neg, *b, *bb, out_cols);
                self.accumulate(grads, *b, db);
            }
            Op::Mul(a, ba, b, bb) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let at = |d: &[f64], bc: Bcast, j: usize| match bc {
                    Bcast::Same => d[j],
                    Bcast::Row => d[j % out_cols],
                    Bcast::Scalar => d[0],
                };
                if self.requires_grad(*a) {
                    let ga: Vec<f64> = g.iter().enumerate().map(|(j, &gj)| gj * at(vb, *bb, j)).collect();
                    let da = self.reduce(&ga, *a, *ba, out_cols);
                    self.accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let gb: Vec<f64> = g.iter().enumerate().map(|(j, &gj)| gj * at(va, *ba, j)).collect();
                    let db = self.reduce(&gb, *b, *bb, out_cols);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Square(x) => {
                let d = elementwise(*x, &|xi, _| 2.0 * xi);
                self.accumulate(grads, *x, d);
            }
            Op::Log(x) => {
                let d = elementwise(*x, &|xi, _| 1.0 / xi);
                self.accumulate(grads, *x, d);
            }
            Op::Exp(x) => {
                let d = elementwise(*x, &|_, yi| yi);
                self.accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = elementwise(*x, &|_, yi| yi * (1.0 - yi));
                self.accumulate(grads, *x, d);
            }
            Op::Softplus(x) => {
                let d = elementwise(*x, &|xi, _| sigmoid(xi));
                self.accumulate(grads, *x, d);
            }
            Op::Elu(x) => {
                let d = elementwise(*x, &|xi, yi| if xi > 0.0 { 1.0 } else { yi + 1.0 });
                self.accumulate(grads, *x, d);
            }
            Op::Relu(x) => {
                let d = elementwise(*x, &|xi, _| if xi > 0.0 { 1.0 } else { 0.0 });
                self.accumulate(grads, *x, d);
            }
            Op::Affine(x, scale) => {
                let d = g.iter().map(|v| v * scale).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Clamp(x, lo, hi) => {
                let d = elementwise(*x, &|xi, _| if xi >= *lo && xi <= *hi { 1.0 } else { 0.0 });
                self.accumulate(grads, *x, d);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![g[0] / n as f64; n]);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Concat(parts) => {
                let rows = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.requires_grad(p) {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            let start = r * out_cols + offset;
                            d.extend_from_slice(&g[start..start + c]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    offset += c;
                }
            }
            Op::SelectRows(x, idx) => {
                let c = out_cols;
                let mut d = vec![0.0; self.value(*x).numel()];
                for (k, &r) in idx.iter().enumerate() {
                    for j in 0..c {
                        d[r * c + j] += g[k * c + j];
                    }
                }
                self.accumulate(grads, *x, d);
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

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `c = op(a) * op(b) + beta * c` for row-major buffers, where `op` is an
/// optional transpose. Result is `m×n` with inner dimension `k`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    // Strides for op(a) (m×k) and op(b) (k×n) over row-major storage.
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: buffer lengths cover every index reachable through the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
