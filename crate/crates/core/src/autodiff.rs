//! Reverse-mode differentiation over a per-pass computation record.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters are borrowed
//! from a [`ParamSet`] without copying; every other node owns its value. The
//! node list is append-only, so it is already in topological order and
//! [`Graph::backward`] replays it once in reverse.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, dot, Tensor};

/// Handle to a trainable tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub requires_grad: bool,
    /// Rows (of a rank-2 parameter) that never receive updates, e.g. the PAD embedding.
    pub frozen_rows: Vec<usize>,
}

/// Ordered collection of model parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
            requires_grad: true,
            frozen_rows: Vec::new(),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
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

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds `scale * g` into each parameter's gradient buffer.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (idx, g) in grads.params.iter().enumerate() {
            if let Some(g) = g {
                let p = &mut self.params[idx];
                if !p.requires_grad {
                    continue;
                }
                for (a, b) in p.grad.data_mut().iter_mut().zip(g) {
                    *a += scale * b;
                }
            }
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    ParamRow(ParamId, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    MatVec(Var, Var),
    MatMul(Var, Var),
    VecMat(Var, Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Stack(Vec<Var>),
    Row(Var, usize),
    Sum(Var),
    Cosine(Var, Var),
    RowsMul(Var, Var),
    RowsCosine(Var, Var),
    Softmax(Var),
    CrossEntropy(Var, usize),
    Maximum(Vec<Var>),
    Mask(Var, Vec<f64>),
    DivScalar(Var, Var),
    Floor(Var, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Computation record for one forward pass.
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    dropout_rng: Option<ChaCha8Rng>,
}

/// Result of [`Graph::backward`]: gradients for parameters and requires-grad leaves.
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<Option<Vec<f64>>>,
    nodes: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn var(&self, v: Var) -> Option<Tensor> {
        self.nodes
            .get(v.0)
            .and_then(|g| g.clone())
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g).expect("gradient shape"))
    }
}

impl<'p> Graph<'p> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            dropout_rng: None,
        }
    }

    /// Training-mode graph with a seeded dropout generator.
    pub fn training(params: &'p ParamSet, seed: u64) -> Self {
        let mut g = Graph::new(params);
        g.dropout_rng = Some(ChaCha8Rng::seed_from_u64(seed));
        g
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => &self.params.get(*id).value,
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input (no gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::var`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let rg = self.params.get(id).requires_grad;
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: rg,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Row `row` of a rank-2 parameter (embedding lookup), differentiable.
    pub fn param_row(&mut self, id: ParamId, row: usize) -> Result<Var> {
        let p = self.params.get(id);
        if p.value.rank() != 2 || row >= p.value.rows() {
            return Err(Error::shape("param_row", p.value.shape(), &[row]));
        }
        let t = Tensor::vector(p.value.row(row).to_vec())?;
        let rg = p.requires_grad && !p.frozen_rows.contains(&row);
        Ok(self.push(t, Op::ParamRow(id, row), rg))
    }

    fn binary_broadcast(
        &mut self,
        kind: tensor::Elementwise,
        a: Var,
        b: Var,
        op: Op,
    ) -> Result<Var> {
        let out = Tensor::elementwise(kind, self.value(a), Some(self.value(b)))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast(tensor::Elementwise::Add, a, b, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast(tensor::Elementwise::Sub, a, b, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast(tensor::Elementwise::Mul, a, b, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(libm::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(tensor::sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(tensor::relu);
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let out = Tensor::matvec(self.value(m), self.value(v))?;
        let rg = self.rg(m) || self.rg(v);
        Ok(self.push(out, Op::MatVec(m, v), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = Tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `w · m` for `w: [n]`, `m: [n×d]`: the `w`-weighted sum of the rows of `m`.
    pub fn vecmat(&mut self, w: Var, m: Var) -> Result<Var> {
        let (wt, mt) = (self.value(w), self.value(m));
        if wt.rank() != 1 || mt.rank() != 2 || wt.len() != mt.rows() {
            return Err(Error::shape("vecmat", wt.shape(), mt.shape()));
        }
        let d = mt.cols();
        let mut out = vec![0.0; d];
        for (i, &wi) in wt.data().iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(mt.row(i)) {
                *o += wi * x;
            }
        }
        let rg = self.rg(w) || self.rg(m);
        Ok(self.push(Tensor::vector(out)?, Op::VecMat(w, m), rg))
    }

    /// `weight · x + bias`.
    pub fn affine(&mut self, weight: Var, x: Var, bias: Var) -> Result<Var> {
        let wx = self.matvec(weight, x)?;
        self.add(wx, bias)
    }

    /// Concatenates rank-0/1 tensors into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat"));
        }
        let mut data = Vec::new();
        let mut rg = false;
        for &p in parts {
            let t = self.value(p);
            if t.rank() > 1 {
                return Err(Error::shape("concat", t.shape(), &[]));
            }
            data.extend_from_slice(t.data());
            rg |= self.rg(p);
        }
        Ok(self.push(Tensor::vector(data)?, Op::Concat(parts.to_vec()), rg))
    }

    /// `a[start..start + len]` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 || len == 0 || start + len > t.len() {
            return Err(Error::shape("slice", t.shape(), &[start, len]));
        }
        let out = Tensor::vector(t.data()[start..start + len].to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Slice(a, start), rg))
    }

    /// Stacks equal-width vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Empty("stack"));
        }
        let width = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * width);
        let mut rg = false;
        for &r in rows {
            let t = self.value(r);
            if t.rank() > 1 || t.len() != width {
                return Err(Error::shape("stack", &[width], t.shape()));
            }
            data.extend_from_slice(t.data());
            rg |= self.rg(r);
        }
        let out = Tensor::matrix(rows.len(), width, data)?;
        Ok(self.push(out, Op::Stack(rows.to_vec()), rg))
    }

    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let t = self.value(m);
        if t.rank() != 2 || i >= t.rows() {
            return Err(Error::shape("row", t.shape(), &[i]));
        }
        let out = Tensor::vector(t.row(i).to_vec())?;
        let rg = self.rg(m);
        Ok(self.push(out, Op::Row(m, i), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Cosine similarity of two vectors; 0 (with zero gradient) if either has zero norm.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let c = Tensor::cosine_similarity(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(c), Op::Cosine(a, b), rg))
    }

    /// Multiplies every row of `m: [r×c]` element-wise by `v: [c]`.
    pub fn rows_mul(&mut self, m: Var, v: Var) -> Result<Var> {
        let (mt, vt) = (self.value(m), self.value(v));
        if mt.rank() != 2 || vt.rank() != 1 || mt.cols() != vt.len() {
            return Err(Error::shape("rows_mul", mt.shape(), vt.shape()));
        }
        let c = mt.cols();
        let mut data = mt.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            for (x, &y) in row.iter_mut().zip(vt.data()) {
                *x *= y;
            }
        }
        let out = Tensor::new(mt.shape().to_vec(), data)?;
        let rg = self.rg(m) || self.rg(v);
        Ok(self.push(out, Op::RowsMul(m, v), rg))
    }

    /// Row-wise cosine similarity of two `[r×c]` matrices, giving `[r]`.
    pub fn rows_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.rank() != 2 || at.shape() != bt.shape() {
            return Err(Error::shape("rows_cosine", at.shape(), bt.shape()));
        }
        let data = (0..at.rows())
            .map(|i| tensor::cosine(at.row(i), bt.row(i)))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::vector(data)?, Op::RowsCosine(a, b), rg))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::softmax(self.value(a))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 1 || target >= t.len() {
            return Err(Error::shape("cross_entropy", t.shape(), &[target]));
        }
        let loss = tensor::log_sum_exp(t.data()) - t.data()[target];
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, target), rg))
    }

    /// Element-wise maximum across equal-shape tensors; ties go to the earliest input.
    pub fn maximum(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("maximum"));
        }
        let mut out = self.value(parts[0]).clone();
        let mut rg = self.rg(parts[0]);
        for &p in &parts[1..] {
            let t = self.value(p);
            if t.shape() != out.shape() {
                return Err(Error::shape("maximum", out.shape(), t.shape()));
            }
            for (o, &x) in out.data_mut().iter_mut().zip(t.data()) {
                if x > *o {
                    *o = x;
                }
            }
            rg |= self.rg(p);
        }
        Ok(self.push(out, Op::Maximum(parts.to_vec()), rg))
    }

    /// `a / s` for a scalar node `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let st = self.value(s);
        if !st.is_scalar() {
            return Err(Error::shape("div_scalar", self.value(a).shape(), st.shape()));
        }
        let d = st.item();
        let out = self.value(a).map(|x| x / d);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(out, Op::DivScalar(a, s), rg))
    }

    /// `max(s, floor)`.
    pub fn floor_at(&mut self, s: Var, floor: f64) -> Var {
        let out = self.value(s).map(|x| if x > floor { x } else { floor });
        let rg = self.rg(s);
        self.push(out, Op::Floor(s, floor), rg)
    }

    /// Inverted dropout; identity in evaluation mode or with `keep >= 1`.
    pub fn dropout(&mut self, a: Var, keep: f64) -> Var {
        if keep >= 1.0 {
            return a;
        }
        let n = self.value(a).len();
        let Some(rng) = self.dropout_rng.as_mut() else {
            return a;
        };
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let t = self.value(a);
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("dropout shape");
        let rg = self.rg(a);
        self.push(out, Op::Mask(a, mask), rg)
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::shape("backward", lt.shape(), &[]));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut pgrads: Vec<Option<Vec<f64>>> = vec![None; self.params.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Param(id) => {
                    add_into(pgrads_slot(&mut pgrads, *id, self.params), &g);
                }
                Op::ParamRow(id, row) => {
                    let cols = g.len();
                    let buf = pgrads_slot(&mut pgrads, *id, self.params);
                    add_into(&mut buf[row * cols..(row + 1) * cols], &g);
                }
                Op::Add(a, b) => {
                    self.acc_broadcast(&mut grads, *a, &g, |gi, _| gi);
                    self.acc_broadcast(&mut grads, *b, &g, |gi, _| gi);
                }
                Op::Sub(a, b) => {
                    self.acc_broadcast(&mut grads, *a, &g, |gi, _| gi);
                    self.acc_broadcast(&mut grads, *b, &g, |gi, _| -gi);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.acc_broadcast(&mut grads, *a, &g, |gi, k| gi * pick(bv, k));
                    self.acc_broadcast(&mut grads, *b, &g, |gi, k| gi * pick(av, k));
                }
                Op::Scale(a, c) => {
                    self.acc(&mut grads, *a, |buf| {
                        for (o, gi) in buf.iter_mut().zip(&g) {
                            *o += c * gi;
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap().data();
                    self.acc(&mut grads, *a, |buf| {
                        for ((o, gi), yi) in buf.iter_mut().zip(&g).zip(y) {
                            *o += gi * (1.0 - yi * yi);
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap().data();
                    self.acc(&mut grads, *a, |buf| {
                        for ((o, gi), yi) in buf.iter_mut().zip(&g).zip(y) {
                            *o += gi * yi * (1.0 - yi);
                        }
                    });
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    self.acc(&mut grads, *a, |buf| {
                        for ((o, gi), xi) in buf.iter_mut().zip(&g).zip(x) {
                            if *xi > 0.0 {
                                *o += gi;
                            }
                        }
                    });
                }
                Op::MatVec(m, v) => {
                    let (mt, vt) = (self.value(*m), self.value(*v));
                    let k = mt.cols();
                    self.acc(&mut grads, *m, |buf| {
                        for (r, gi) in g.iter().enumerate() {
                            if *gi == 0.0 {
                                continue;
                            }
                            for (o, vj) in buf[r * k..(r + 1) * k].iter_mut().zip(vt.data()) {
                                *o += gi * vj;
                            }
                        }
                    });
                    self.acc(&mut grads, *v, |buf| {
                        for (r, gi) in g.iter().enumerate() {
                            if *gi == 0.0 {
                                continue;
                            }
                            for (o, mij) in buf.iter_mut().zip(mt.row(r)) {
                                *o += gi * mij;
                            }
                        }
                    });
                }
                Op::MatMul(a, b) => {
                    let (at, bt) = (self.value(*a), self.value(*b));
                    let (m, k, nn) = (at.rows(), at.cols(), bt.cols());
                    self.acc(&mut grads, *a, |buf| {
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..nn {
                                    s += g[i * nn + j] * bt.data()[p * nn + j];
                                }
                                buf[i * k + p] += s;
                            }
                        }
                    });
                    self.acc(&mut grads, *b, |buf| {
                        for i in 0..m {
                            for p in 0..k {
                                let aip = at.data()[i * k + p];
                                for j in 0..nn {
                                    buf[p * nn + j] += aip * g[i * nn + j];
                                }
                            }
                        }
                    });
                }
                Op::VecMat(w, m) => {
                    let (wt, mt) = (self.value(*w), self.value(*m));
                    let d = mt.cols();
                    self.acc(&mut grads, *w, |buf| {
                        for (r, o) in buf.iter_mut().enumerate() {
                            *o += dot(&g, mt.row(r));
                        }
                    });
                    self.acc(&mut grads, *m, |buf| {
                        for (r, &wr) in wt.data().iter().enumerate() {
                            for (o, gj) in buf[r * d..(r + 1) * d].iter_mut().zip(&g) {
                                *o += wr * gj;
                            }
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        let seg = &g[off..off + len];
                        self.acc(&mut grads, p, |buf| add_into(buf, seg));
                        off += len;
                    }
                }
                Op::Slice(a, start) => {
                    let start = *start;
                    self.acc(&mut grads, *a, |buf| {
                        add_into(&mut buf[start..start + g.len()], &g)
                    });
                }
                Op::Stack(rows) => {
                    let w = self.value(rows[0]).len();
                    for (r, &v) in rows.iter().enumerate() {
                        let seg = &g[r * w..(r + 1) * w];
                        self.acc(&mut grads, v, |buf| add_into(buf, seg));
                    }
                }
                Op::Row(m, r) => {
                    let w = g.len();
                    let r = *r;
                    self.acc(&mut grads, *m, |buf| add_into(&mut buf[r * w..(r + 1) * w], &g));
                }
                Op::Sum(a) => {
                    let g0 = g[0];
                    self.acc(&mut grads, *a, |buf| {
                        for o in buf.iter_mut() {
                            *o += g0;
                        }
                    });
                }
                Op::Cosine(a, b) => {
                    let (at, bt) = (self.value(*a).data(), self.value(*b).data());
                    let (ga, gb) = cosine_grads(at, bt, g[0]);
                    self.acc(&mut grads, *a, |buf| add_into(buf, &ga));
                    self.acc(&mut grads, *b, |buf| add_into(buf, &gb));
                }
                Op::RowsMul(m, v) => {
                    let (mt, vt) = (self.value(*m), self.value(*v));
                    let c = vt.len();
                    self.acc(&mut grads, *m, |buf| {
                        for (k, o) in buf.iter_mut().enumerate() {
                            *o += g[k] * vt.data()[k % c];
                        }
                    });
                    self.acc(&mut grads, *v, |buf| {
                        for (k, mk) in mt.data().iter().enumerate() {
                            buf[k % c] += g[k] * mk;
                        }
                    });
                }
                Op::RowsCosine(a, b) => {
                    let (at, bt) = (self.value(*a), self.value(*b));
                    let c = at.cols();
                    let mut ga = vec![0.0; at.len()];
                    let mut gb = vec![0.0; bt.len()];
                    for (r, gr) in g.iter().enumerate() {
                        if *gr == 0.0 {
                            continue;
                        }
                        let (da, db) = cosine_grads(at.row(r), bt.row(r), *gr);
                        ga[r * c..(r + 1) * c].copy_from_slice(&da);
                        gb[r * c..(r + 1) * c].copy_from_slice(&db);
                    }
                    self.acc(&mut grads, *a, |buf| add_into(buf, &ga));
                    self.acc(&mut grads, *b, |buf| add_into(buf, &gb));
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().unwrap().data();
                    let gy = dot(&g, y);
                    self.acc(&mut grads, *a, |buf| {
                        for ((o, gi), yi) in buf.iter_mut().zip(&g).zip(y) {
                            *o += yi * (gi - gy);
                        }
                    });
                }
                Op::CrossEntropy(a, t) => {
                    let p = tensor::softmax(self.value(*a).data());
                    let g0 = g[0];
                    self.acc(&mut grads, *a, |buf| {
                        for (k, (o, pk)) in buf.iter_mut().zip(&p).enumerate() {
                            let y = if k == *t { 1.0 } else { 0.0 };
                            *o += g0 * (pk - y);
                        }
                    });
                }
                Op::Maximum(parts) => {
                    let out = node.value.as_ref().unwrap().data();
                    let mut claimed = vec![false; out.len()];
                    for &p in parts {
                        let x = self.value(p).data();
                        let mut seg = vec![0.0; out.len()];
                        let mut any = false;
                        for k in 0..out.len() {
                            if !claimed[k] && x[k] == out[k] {
                                claimed[k] = true;
                                seg[k] = g[k];
                                any = true;
                            }
                        }
                        if any {
                            self.acc(&mut grads, p, |buf| add_into(buf, &seg));
                        }
                    }
                }
                Op::Mask(a, mask) => {
                    self.acc(&mut grads, *a, |buf| {
                        for ((o, gi), m) in buf.iter_mut().zip(&g).zip(mask) {
                            *o += gi * m;
                        }
                    });
                }
                Op::DivScalar(a, s) => {
                    let d = self.value(*s).item();
                    let at = self.value(*a).data();
                    self.acc(&mut grads, *a, |buf| {
                        for (o, gi) in buf.iter_mut().zip(&g) {
                            *o += gi / d;
                        }
                    });
                    let gs = -dot(&g, at) / (d * d);
                    self.acc(&mut grads, *s, |buf| buf[0] += gs);
                }
                Op::Floor(s, floor) => {
                    let x = self.value(*s).data();
                    self.acc(&mut grads, *s, |buf| {
                        for ((o, gi), xi) in buf.iter_mut().zip(&g).zip(x) {
                            if *xi > *floor {
                                *o += gi;
                            }
                        }
                    });
                }
            }
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| match (&n.op, &n.value) {
                (Op::Leaf, Some(t)) if n.requires_grad => t.shape().to_vec(),
                _ => Vec::new(),
            })
            .collect();
        Ok(Gradients {
            params: pgrads,
            nodes: grads,
            shapes,
        })
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.value(v).len();
        let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(buf);
    }

    /// Accumulates `f(g_k, k)` into `v`, summing when `v` was broadcast as a scalar.
    fn acc_broadcast(
        &self,
        grads: &mut [Option<Vec<f64>>],
        v: Var,
        g: &[f64],
        f: impl Fn(f64, usize) -> f64,
    ) {
        let len = self.value(v).len();
        if len == g.len() {
            self.acc(grads, v, |buf| {
                for (k, (o, gi)) in buf.iter_mut().zip(g).enumerate() {
                    *o += f(*gi, k);
                }
            });
        } else {
            let s: f64 = g.iter().enumerate().map(|(k, gi)| f(*gi, k)).sum();
            self.acc(grads, v, |buf| buf[0] += s);
        }
    }
}

fn pick(t: &Tensor, k: usize) -> f64 {
    if t.len() == 1 {
        t.item()
    } else {
        t.data()[k]
    }
}

fn pgrads_slot<'a>(
    pgrads: &'a mut [Option<Vec<f64>>],
    id: ParamId,
    params: &ParamSet,
) -> &'a mut Vec<f64> {
    pgrads[id.0].get_or_insert_with(|| vec![0.0; params.value(id).len()])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// d cos(a, b) / da, d cos(a, b) / db scaled by `g`; zero for zero-norm inputs.
fn cosine_grads(a: &[f64], b: &[f64], g: f64) -> (Vec<f64>, Vec<f64>) {
    let na2 = dot(a, a);
    let nb2 = dot(b, b);
    if na2 == 0.0 || nb2 == 0.0 {
        return (vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let (na, nb) = (libm::sqrt(na2), libm::sqrt(nb2));
    let c = dot(a, b) / (na * nb);
    let inv = 1.0 / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(ai, bi)| g * (bi * inv - c * ai / na2))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(ai, bi)| g * (ai * inv - c * bi / nb2))
        .collect();
    (ga, gb)
}

/// Max over input coordinates of `|analytic - central difference| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let empty = ParamSet::new();
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new(&empty);
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new(&empty);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if !g.value(out).is_finite() {
        return Err(Error::NonFinite(String::from("output")));
    }
    let grads = g.backward(out)?;

    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .var(*v)
            .map(|t| t.into_data())
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for (j, &a) in analytic.iter().enumerate() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + epsilon;
            let up = eval(&xs)?;
            xs[i].data_mut()[j] = orig - epsilon;
            let down = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!("input {i}[{j}]")));
            }
            let err = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// [`grad_check`] over every trainable coordinate of a parameter set.
pub fn grad_check_params<F>(params: &ParamSet, f: F, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let mut g = Graph::new(params);
    let out = f(&mut g)?;
    if !g.value(out).is_finite() {
        return Err(Error::NonFinite(String::from("output")));
    }
    let grads = g.backward(out)?;
    drop(g);

    let mut work = params.clone();
    let mut worst = 0.0f64;
    for id in params.ids() {
        let p = params.get(id);
        if !p.requires_grad {
            continue;
        }
        let zeros;
        let analytic = match grads.param(id) {
            Some(a) => a,
            None => {
                zeros = vec![0.0; p.value.len()];
                &zeros
            }
        };
        for (j, &a) in analytic.iter().enumerate() {
            let orig = p.value.data()[j];
            work.get_mut(id).value.data_mut()[j] = orig + epsilon;
            let up = {
                let mut g = Graph::new(&work);
                let o = f(&mut g)?;
                g.value(o).item()
            };
            work.get_mut(id).value.data_mut()[j] = orig - epsilon;
            let down = {
                let mut g = Graph::new(&work);
                let o = f(&mut g)?;
                g.value(o).item()
            };
            work.get_mut(id).value.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!("{}[{j}]", p.name)));
            }
            let err = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
