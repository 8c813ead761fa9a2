//! Reverse-mode tape.
//!
//! Every primitive appends one node whose inputs already live on the tape, so
//! node order is a topological order and `backward` is a single reverse sweep.
//! Broadcasting is limited to the right-hand operand of binary element-wise
//! ops: same shape, `1×c` (row), `r×1` (column) or `1×1` (scalar).

use std::sync::atomic::{AtomicU32, Ordering};

use super::tensor::Tensor;
use crate::{Error, Real, Result};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Identifier of a node on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

/// Hand-written vector-Jacobian product for an operation whose forward value
/// is computed outside the tape (deformation, projection, rasterization).
pub trait CustomOp<T: Real>: Send + Sync {
    fn name(&self) -> &str;

    /// Gradients with respect to each input, `None` where not defined.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

enum Op<T: Real> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize, Bcast),
    Sub(usize, usize, Bcast),
    Mul(usize, usize, Bcast),
    Div(usize, usize, Bcast),
    ScalarMul(usize, T),
    Softplus(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Abs(usize),
    SoftmaxRows(usize),
    Sum(usize),
    Mean(usize),
    L2NormRows(usize),
    Concat(Vec<usize>, usize),
    GatherRows(usize, Vec<usize>),
    Reshape(usize),
    Transpose(usize),
    Custom(Vec<usize>, Box<dyn CustomOp<T>>),
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of primitive operations and their forward values.
pub struct Tape<T: Real> {
    id: u32,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `max(x, 0) + ln(1 + e^{-|x|})`.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &str) -> Result<Var> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name.to_string() });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b, _)
            | Op::Sub(a, b, _)
            | Op::Mul(a, b, _)
            | Op::Div(a, b, _) => self.nodes[*a].requires_grad || self.nodes[*b].requires_grad,
            Op::ScalarMul(a, _)
            | Op::Softplus(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Abs(a)
            | Op::SoftmaxRows(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::L2NormRows(a)
            | Op::GatherRows(a, _)
            | Op::Reshape(a)
            | Op::Transpose(a) => self.nodes[*a].requires_grad,
            Op::Concat(ins, _) | Op::Custom(ins, _) => ins.iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var { tape: self.id, index: self.nodes.len() - 1 })
    }

    /// Records an input tensor. Gradients are collected only when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        let v = self.push(value, Op::Leaf, "leaf")?;
        self.nodes[v.index].requires_grad = requires_grad;
        Ok(v)
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.index].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    fn bcast(&self, op: &'static str, a: usize, b: usize) -> Result<Bcast> {
        let sa = self.nodes[a].value.shape();
        let sb = self.nodes[b].value.shape();
        if sa == sb {
            return Ok(Bcast::Same);
        }
        let (ar, ac) = (self.nodes[a].value.rows(), self.nodes[a].value.cols());
        let (br, bc) = (self.nodes[b].value.rows(), self.nodes[b].value.cols());
        if sb.len() == 2 {
            if br == 1 && bc == 1 {
                return Ok(Bcast::Scalar);
            }
            if br == 1 && bc == ac && sa.len() == 2 {
                return Ok(Bcast::Row);
            }
            if bc == 1 && br == ar && sa.len() == 2 {
                return Ok(Bcast::Col);
            }
        }
        Err(Error::ShapeMismatch { op, lhs: sa.to_vec(), rhs: sb.to_vec() })
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        make: impl Fn(usize, usize, Bcast) -> Op<T>,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let mode = self.bcast(op, ia, ib)?;
        let av = &self.nodes[ia].value;
        let bv = &self.nodes[ib].value;
        let cols = av.cols();
        let bd = bv.data();
        let data: Vec<T> = av
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let y = match mode {
                    Bcast::Same => bd[k],
                    Bcast::Row => bd[k % cols],
                    Bcast::Col => bd[k / cols],
                    Bcast::Scalar => bd[0],
                };
                f(x, y)
            })
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, make(ia, ib, mode), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let av = &self.nodes[ia].value;
        let bv = &self.nodes[ib].value;
        if av.shape().len() != 2 || bv.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let out = av.matmul(bv)?;
        self.push(out, Op::MatMul(ia, ib), "matmul")
    }

    pub fn scalar_mul(&mut self, a: Var, s: T) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.map(|x| x * s);
        self.push(out, Op::ScalarMul(ia, s), "scalar-mul")
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: fn(usize) -> Op<T>) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.map(f);
        self.push(out, op(ia), name)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary("softplus", a, softplus, Op::Softplus)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(T::zero()), Op::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, |x| x.tanh(), Op::Tanh)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary("abs", a, |x| x.abs(), Op::Abs)
    }

    /// Row-wise softmax with the row maximum subtracted first.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let av = &self.nodes[ia].value;
        let cols = av.cols();
        if cols == 0 {
            return Err(Error::InvalidShape {
                op: "softmax-rows",
                shape: av.shape().to_vec(),
                reason: "rows must be nonempty".into(),
            });
        }
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(cols) {
            let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            let inv = T::one() / s;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, Op::SoftmaxRows(ia), "softmax-rows")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.nodes[ia].value.sum();
        self.push(Tensor::scalar(s), Op::Sum(ia), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        if v.is_empty() {
            return Err(Error::InvalidShape { op: "mean", shape: v.shape().to_vec(), reason: "empty".into() });
        }
        let m = v.sum() / T::lit(v.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean(ia), "mean")
    }

    /// Euclidean norm of each row: `r×c → r×1`.
    pub fn l2_norm_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let cols = v.cols();
        let data: Vec<T> = v
            .data()
            .chunks(cols.max(1))
            .map(|r| r.iter().map(|&x| x * x).sum::<T>().sqrt())
            .collect();
        let rows = v.rows();
        self.push(Tensor::from_rows(rows, 1, data), Op::L2NormRows(ia), "l2-norm")
    }

    /// Concatenates rank-2 tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::InvalidShape { op: "concat", shape: vec![parts.len()], reason: "needs ≥1 input, axis 0 or 1".into() });
        }
        let idx: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect::<Result<_>>()?;
        let first = &self.nodes[idx[0]].value;
        let (r0, c0) = (first.rows(), first.cols());
        for &i in &idx[1..] {
            let v = &self.nodes[i].value;
            let ok = if axis == 0 { v.cols() == c0 } else { v.rows() == r0 };
            if !ok {
                return Err(Error::ShapeMismatch { op: "concat", lhs: first.shape().to_vec(), rhs: v.shape().to_vec() });
            }
        }
        let out = if axis == 0 {
            let rows = idx.iter().map(|&i| self.nodes[i].value.rows()).sum();
            let mut data = Vec::with_capacity(rows * c0);
            for &i in &idx {
                data.extend_from_slice(self.nodes[i].value.data());
            }
            Tensor::from_rows(rows, c0, data)
        } else {
            let cols: usize = idx.iter().map(|&i| self.nodes[i].value.cols()).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for r in 0..r0 {
                for &i in &idx {
                    data.extend_from_slice(self.nodes[i].value.row(r));
                }
            }
            Tensor::from_rows(r0, cols, data)
        };
        self.push(out, Op::Concat(idx, axis), "concat")
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let cols = v.cols();
        if let Some(&bad) = indices.iter().find(|&&i| i >= v.rows()) {
            return Err(Error::InvalidShape {
                op: "gather-rows",
                shape: v.shape().to_vec(),
                reason: format!("row index {bad} out of range"),
            });
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(v.row(i));
        }
        let out = Tensor::from_rows(indices.len(), cols, data);
        self.push(out, Op::GatherRows(ia, indices.to_vec()), "gather-rows")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let n: usize = shape.iter().product();
        if n != v.len() || shape.is_empty() {
            return Err(Error::ShapeMismatch { op: "reshape", lhs: v.shape().to_vec(), rhs: shape.to_vec() });
        }
        let out = v.reshaped(shape)?;
        self.push(out, Op::Reshape(ia), "reshape")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.transpose();
        self.push(out, Op::Transpose(ia), "transpose")
    }

    /// Records an externally computed value with a hand-written backward.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Result<Var> {
        let idx: Vec<usize> = inputs.iter().map(|&p| self.idx(p)).collect::<Result<_>>()?;
        let name = op.name().to_string();
        self.push(output, Op::Custom(idx, op), &name)
    }

    /// Populates gradients of the scalar `loss` for every node that requires
    /// them; fan-out contributions accumulate additively.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let il = self.idx(loss)?;
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let shape = self.nodes[il].value.shape().to_vec();
        if self.nodes[il].value.len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(Tensor::full(&shape, T::one()));

        for i in (0..=il).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.node_vjp(i, &g)?;
            for (input, contrib) in contributions {
                if input >= i {
                    return Err(Error::InvalidShape { op: "backward", shape: vec![input, i], reason: "tape cycle".into() });
                }
                if !self.nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::NonFinite { op: format!("gradient of node {i}") });
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn reduce_bcast(&self, g: Tensor<T>, mode: Bcast, target: usize) -> Tensor<T> {
        let tv = &self.nodes[target].value;
        match mode {
            Bcast::Same => g,
            Bcast::Scalar => Tensor::new(tv.shape().to_vec(), vec![g.sum()]).expect("scalar shape"),
            Bcast::Row => {
                let cols = g.cols();
                let mut out = vec![T::zero(); cols];
                for row in g.data().chunks(cols) {
                    for (o, &v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                Tensor::new(tv.shape().to_vec(), out).expect("row shape")
            }
            Bcast::Col => {
                let cols = g.cols();
                let out = g.data().chunks(cols).map(|r| r.iter().copied().sum()).collect();
                Tensor::new(tv.shape().to_vec(), out).expect("col shape")
            }
        }
    }

    /// Expands the (possibly broadcast) right operand to the left's layout.
    fn expand(&self, b: usize, mode: Bcast, like: &Tensor<T>) -> Vec<T> {
        let bd = self.nodes[b].value.data();
        let cols = like.cols();
        (0..like.len())
            .map(|k| match mode {
                Bcast::Same => bd[k],
                Bcast::Row => bd[k % cols],
                Bcast::Col => bd[k / cols],
                Bcast::Scalar => bd[0],
            })
            .collect()
    }

    fn node_vjp(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(usize, Tensor<T>)>> {
        let node = &self.nodes[i];
        let out = &node.value;
        let rg = |k: usize| self.nodes[k].requires_grad;
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                if rg(*a) {
                    res.push((*a, g.matmul_t(false, bv, true)?));
                }
                if rg(*b) {
                    res.push((*b, av.matmul_t(true, g, false)?));
                }
            }
            Op::Add(a, b, m) => {
                if rg(*a) {
                    res.push((*a, g.clone()));
                }
                if rg(*b) {
                    res.push((*b, self.reduce_bcast(g.clone(), *m, *b)));
                }
            }
            Op::Sub(a, b, m) => {
                if rg(*a) {
                    res.push((*a, g.clone()));
                }
                if rg(*b) {
                    res.push((*b, self.reduce_bcast(g.map(|v| -v), *m, *b)));
                }
            }
            Op::Mul(a, b, m) => {
                let av = &self.nodes[*a].value;
                let be = self.expand(*b, *m, av);
                if rg(*a) {
                    let d = g.data().iter().zip(&be).map(|(&gv, &bv)| gv * bv).collect();
                    res.push((*a, Tensor::new(av.shape().to_vec(), d)?));
                }
                if rg(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(&gv, &x)| gv * x).collect();
                    let full = Tensor::new(av.shape().to_vec(), d)?;
                    res.push((*b, self.reduce_bcast(full, *m, *b)));
                }
            }
            Op::Div(a, b, m) => {
                let av = &self.nodes[*a].value;
                let be = self.expand(*b, *m, av);
                if rg(*a) {
                    let d = g.data().iter().zip(&be).map(|(&gv, &bv)| gv / bv).collect();
                    res.push((*a, Tensor::new(av.shape().to_vec(), d)?));
                }
                if rg(*b) {
                    let d = g
                        .data()
                        .iter()
                        .zip(out.data())
                        .zip(&be)
                        .map(|((&gv, &o), &bv)| -gv * o / bv)
                        .collect();
                    let full = Tensor::new(av.shape().to_vec(), d)?;
                    res.push((*b, self.reduce_bcast(full, *m, *b)));
                }
            }
            Op::ScalarMul(a, s) => {
                let s = *s;
                res.push((*a, g.map(|v| v * s)));
            }
            Op::Softplus(a) => {
                let x = &self.nodes[*a].value;
                res.push((*a, g.zip_map(x, |gv, xv| gv * sigmoid(xv))));
            }
            Op::Relu(a) => {
                let x = &self.nodes[*a].value;
                res.push((*a, g.zip_map(x, |gv, xv| if xv > T::zero() { gv } else { T::zero() })));
            }
            Op::Sigmoid(a) => {
                res.push((*a, g.zip_map(out, |gv, s| gv * s * (T::one() - s))));
            }
            Op::Tanh(a) => {
                res.push((*a, g.zip_map(out, |gv, t| gv * (T::one() - t * t))));
            }
            Op::Abs(a) => {
                let x = &self.nodes[*a].value;
                res.push((*a, g.zip_map(x, |gv, xv| if xv > T::zero() { gv } else if xv < T::zero() { -gv } else { T::zero() })));
            }
            Op::SoftmaxRows(a) => {
                let cols = out.cols();
                let mut d = Vec::with_capacity(out.len());
                for (srow, grow) in out.data().chunks(cols).zip(g.data().chunks(cols)) {
                    let dot: T = srow.iter().zip(grow).map(|(&s, &gv)| s * gv).sum();
                    d.extend(srow.iter().zip(grow).map(|(&s, &gv)| s * (gv - dot)));
                }
                res.push((*a, Tensor::new(out.shape().to_vec(), d)?));
            }
            Op::Sum(a) => {
                let shape = self.nodes[*a].value.shape();
                res.push((*a, Tensor::full(shape, g.item())));
            }
            Op::Mean(a) => {
                let v = &self.nodes[*a].value;
                res.push((*a, Tensor::full(v.shape(), g.item() / T::lit(v.len() as f64))));
            }
            Op::L2NormRows(a) => {
                let x = &self.nodes[*a].value;
                let cols = x.cols();
                let mut d = Vec::with_capacity(x.len());
                for (r, row) in x.data().chunks(cols).enumerate() {
                    let n = out.data()[r];
                    let scale = if n > T::zero() { g.data()[r] / n } else { T::zero() };
                    d.extend(row.iter().map(|&v| v * scale));
                }
                res.push((*a, Tensor::new(x.shape().to_vec(), d)?));
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = &self.nodes[p].value;
                    if *axis == 0 {
                        let n = pv.len();
                        if rg(p) {
                            res.push((p, Tensor::new(pv.shape().to_vec(), g.data()[offset..offset + n].to_vec())?));
                        }
                        offset += n;
                    } else {
                        let pc = pv.cols();
                        if rg(p) {
                            let mut d = Vec::with_capacity(pv.len());
                            for r in 0..pv.rows() {
                                d.extend_from_slice(&g.row(r)[offset..offset + pc]);
                            }
                            res.push((p, Tensor::new(pv.shape().to_vec(), d)?));
                        }
                        offset += pc;
                    }
                }
            }
            Op::GatherRows(a, indices) => {
                let av = &self.nodes[*a].value;
                let cols = av.cols();
                let mut d = Tensor::zeros(av.shape());
                let dd = d.data_mut();
                for (k, &src) in indices.iter().enumerate() {
                    for c in 0..cols {
                        dd[src * cols + c] += g.data()[k * cols + c];
                    }
                }
                res.push((*a, d));
            }
            Op::Reshape(a) => {
                res.push((*a, g.reshaped(self.nodes[*a].value.shape())?));
            }
            Op::Transpose(a) => {
                res.push((*a, g.transpose().reshaped(self.nodes[*a].value.shape())?));
            }
            Op::Custom(ins, op) => {
                let inputs: Vec<&Tensor<T>> = ins.iter().map(|&k| &self.nodes[k].value).collect();
                let grads = op.backward(&inputs, out, g)?;
                for (&k, gk) in ins.iter().zip(grads) {
                    if let Some(gk) = gk {
                        if gk.shape() != self.nodes[k].value.shape() {
                            return Err(Error::ShapeMismatch {
                                op: "custom backward",
                                lhs: gk.shape().to_vec(),
                                rhs: self.nodes[k].value.shape().to_vec(),
                            });
                        }
                        if rg(k) {
                            res.push((k, gk));
                        }
                    }
                }
            }
        }
        Ok(res)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(r: usize, c: usize, d: &[f64]) -> Tensor<f64> {
        Tensor::from_rows(r, c, d.to_vec())
    }

    #[test]
    fn softmax_of_singleton_is_one() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 1, &[5.0])).unwrap();
        let s = tape.softmax_rows(x).unwrap();
        assert_eq!(tape.value(s).data(), &[1.0]);
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let mut tape = Tape::new();
        let x = tape.constant(t(2, 3, &[1e300, -1e300, 0.0, 800.0, 801.0, 802.0])).unwrap();
        let s = tape.softmax_rows(x).unwrap();
        for r in 0..2 {
            let sum: f64 = tape.value(s).row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_matmul_returns_input() {
        let mut tape = Tape::new();
        let i3 = tape.constant(Tensor::eye(3)).unwrap();
        let a = tape.constant(t(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        let p = tape.matmul(i3, a).unwrap();
        assert_eq!(tape.value(p), tape.value(a));
    }

    #[test]
    fn softplus_of_zero_is_ln_two() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 1, &[0.0])).unwrap();
        let y = tape.softplus(x).unwrap();
        assert!((tape.value(y).item() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
    }

    #[test]
    fn fan_out_accumulates_exactly() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 3, &[0.3, -1.0, 7.0]), true).unwrap();
        let y = tape.add(x, x).unwrap();
        let l = tape.sum(y).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 1, &[1.0]), true).unwrap();
        let l = tape.sum(x).unwrap();
        tape.backward(l).unwrap();
        assert!(matches!(tape.backward(l), Err(Error::BackwardTwice)));
        assert!(matches!(tape.sum(x), Err(Error::BackwardTwice)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[1.0, 2.0]), true).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shape_error_names_op_and_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(&[3, 2])).unwrap();
        let msg = tape.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn non_finite_forward_is_a_hard_error() {
        let mut tape = Tape::new();
        let a = tape.constant(t(1, 1, &[1.0])).unwrap();
        let z = tape.constant(t(1, 1, &[0.0])).unwrap();
        assert!(matches!(tape.div(a, z), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn vars_from_other_tapes_are_rejected() {
        let mut t1 = Tape::<f64>::new();
        let mut t2 = Tape::<f64>::new();
        let x = t1.constant(Tensor::scalar(1.0)).unwrap();
        assert!(matches!(t2.sum(x), Err(Error::ForeignVar)));
    }
}
