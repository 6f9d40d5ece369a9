//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] is built fresh for every forward pass. Each operation appends a
//! node holding its forward value and the ids of its inputs, so inputs always
//! precede the node that consumes them. [`Tape::backward`] consumes the tape
//! and walks the nodes once in reverse append order.
//!
//! Binary elementwise operations require identical shapes, except that a
//! rank-0 operand is broadcast against the other one.

use crate::error::{Error, Result};
use crate::tensor::{axis_layout, matmul_a_bt, matmul_at_b, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Exp,
    Log,
    Relu,
    Sigmoid,
    /// ln(1 + eˣ), evaluated stably.
    Softplus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    AddRow(Var, Var),
    LogSoftmax(Var, usize),
    Reduce(Reduction, Var, Option<usize>),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node of a consumed tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
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

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let out_shape = if ta.shape() == tb.shape() {
            ta.shape().to_vec()
        } else if ta.is_scalar() {
            tb.shape().to_vec()
        } else if tb.is_scalar() {
            ta.shape().to_vec()
        } else {
            return Err(Error::dim(name, ta.shape(), tb.shape()));
        };
        if kind == Binary::Div && tb.data().iter().any(|&v| v == 0.0) {
            return Err(Error::domain("div", "divisor contains zero"));
        }
        let f: fn(f64, f64) -> f64 = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
            Binary::Div => |x, y| x / y,
        };
        let n: usize = out_shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let (sa, sb) = (da.len() == 1 && ta.is_scalar(), db.len() == 1 && tb.is_scalar());
        let data = (0..n)
            .map(|i| f(da[if sa { 0 } else { i }], db[if sb { 0 } else { i }]))
            .collect();
        let value = Tensor::new(out_shape, data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Binary(kind, a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let value = match kind {
            Unary::Neg => ta.map(|v| -v),
            Unary::Exp => ta.map(f64::exp),
            Unary::Log => {
                if let Some(bad) = ta.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                    return Err(Error::domain(
                        "log",
                        format!("requires strictly positive input, found {bad}"),
                    ));
                }
                ta.map(f64::ln)
            }
            Unary::Relu => ta.map(relu),
            Unary::Sigmoid => ta.map(sigmoid),
            Unary::Softplus => ta.map(softplus),
        };
        let ng = self.ng(a);
        Ok(self.push(value, Op::Unary(kind, a), ng))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Neg, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Softplus, a)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v + c);
        let ng = self.ng(a);
        self.push(value, Op::AddScalar(a), ng)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v * c);
        let ng = self.ng(a);
        self.push(value, Op::MulScalar(a, c), ng)
    }

    /// Adds the vector `bias` [n] to every row of `x` [m×n].
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.rank() != 2 || tb.rank() != 1 || tx.shape()[1] != tb.shape()[0] {
            return Err(Error::dim("add_row", tx.shape(), tb.shape()));
        }
        let n = tb.numel();
        let mut value = tx.clone();
        for row in value.data_mut().chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(value, Op::AddRow(x, bias), ng))
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<()> {
        let shape = self.shape(a);
        if axis >= shape.len() {
            return Err(Error::dim(op, shape, &[axis]));
        }
        Ok(())
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", a, axis)?;
        let ta = self.value(a);
        let (outer, n, inner) = axis_layout(ta.shape(), axis);
        let src = ta.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = (0..n).map(|j| (src[idx(j)] - max).exp()).sum::<f64>().ln();
                for j in 0..n {
                    out[idx(j)] = src[idx(j)] - max - lse;
                }
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::LogSoftmax(a, axis), ng))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ls = self.log_softmax(a, axis)?;
        self.exp(ls)
    }

    /// Sum or mean over one axis (removing it) or over everything (rank-0 result).
    pub fn reduce(&mut self, kind: Reduction, a: Var, axis: Option<usize>) -> Result<Var> {
        let ta = self.value(a);
        let value = match axis {
            None => {
                let s = ta.sum();
                Tensor::scalar(match kind {
                    Reduction::Sum => s,
                    Reduction::Mean => s / ta.numel() as f64,
                })
            }
            Some(axis) => {
                self.check_axis("reduce", a, axis)?;
                let ta = self.value(a);
                let (outer, n, inner) = axis_layout(ta.shape(), axis);
                let scale = match kind {
                    Reduction::Sum => 1.0,
                    Reduction::Mean => 1.0 / n as f64,
                };
                let src = ta.data();
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for j in 0..n {
                        let base = (o * n + j) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += src[base + i];
                        }
                    }
                }
                out.iter_mut().for_each(|v| *v *= scale);
                let mut shape = ta.shape().to_vec();
                shape.remove(axis);
                Tensor::new(shape, out)?
            }
        };
        let ng = self.ng(a);
        Ok(self.push(value, Op::Reduce(kind, a, axis), ng))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduction::Sum, a, None)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduction::Mean, a, None)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(Reduction::Sum, a, Some(axis))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        self.check_axis("concat", *first, axis)?;
        let base = self.shape(*first).to_vec();
        let mut extent = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::dim("concat", &base, s));
            }
            extent += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = extent;
        let (outer, _, inner) = axis_layout(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let w = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let value = Tensor::new(shape, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), ng))
    }

    /// The slice `start..start+len` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("narrow", a, axis)?;
        let ta = self.value(a);
        let (outer, n, inner) = axis_layout(ta.shape(), axis);
        if len == 0 || start + len > n {
            return Err(Error::Bounds {
                index: start + len,
                extent: n,
            });
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            data.extend_from_slice(&ta.data()[from..from + len * inner]);
        }
        let mut shape = ta.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, data)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::Narrow(a, axis, start), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::Reshape(a), ng))
    }

    /// Propagates d`loss`/d(node) for every node, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let n_nodes = self.nodes.len();
        if loss.0 >= n_nodes {
            return Err(Error::Contract("loss is not on this tape".into()));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..n_nodes).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut send = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.nodes[a.0].needs_grad {
                    let d = matmul_a_bt(g.data(), tb.data(), m, k, n);
                    send(*a, Tensor::new(vec![m, k], d).expect("matmul grad shape"));
                }
                if self.nodes[b.0].needs_grad {
                    let d = matmul_at_b(ta.data(), g.data(), m, k, n);
                    send(*b, Tensor::new(vec![k, n], d).expect("matmul grad shape"));
                }
            }
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let at = |t: &Tensor, i: usize| if t.is_scalar() { t.data()[0] } else { t.data()[i] };
                let gd = g.data();
                let (ga, gb): (Vec<f64>, Vec<f64>) = match kind {
                    Binary::Add => (gd.to_vec(), gd.to_vec()),
                    Binary::Sub => (gd.to_vec(), gd.iter().map(|v| -v).collect()),
                    Binary::Mul => (
                        (0..gd.len()).map(|i| gd[i] * at(tb, i)).collect(),
                        (0..gd.len()).map(|i| gd[i] * at(ta, i)).collect(),
                    ),
                    Binary::Div => (
                        (0..gd.len()).map(|i| gd[i] / at(tb, i)).collect(),
                        (0..gd.len())
                            .map(|i| {
                                let y = at(tb, i);
                                -gd[i] * at(ta, i) / (y * y)
                            })
                            .collect(),
                    ),
                };
                let fit = |t: &Tensor, d: Vec<f64>| {
                    if t.is_scalar() {
                        Tensor::scalar(d.iter().sum())
                    } else {
                        Tensor::new(t.shape().to_vec(), d).expect("binary grad shape")
                    }
                };
                send(*a, fit(ta, ga));
                send(*b, fit(tb, gb));
            }
            Op::Unary(kind, a) => {
                let ta = val(*a);
                let out = &node.value;
                let d = match kind {
                    Unary::Neg => g.map(|v| -v),
                    Unary::Exp => g.zip_map(out, |gv, y| gv * y),
                    Unary::Log => g.zip_map(ta, |gv, x| gv / x),
                    Unary::Relu => g.zip_map(ta, |gv, x| if x > 0.0 { gv } else { 0.0 }),
                    Unary::Sigmoid => g.zip_map(out, |gv, y| gv * y * (1.0 - y)),
                    Unary::Softplus => g.zip_map(ta, |gv, x| gv * sigmoid(x)),
                };
                send(*a, d);
            }
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::MulScalar(a, c) => send(*a, g.map(|v| v * c)),
            Op::AddRow(x, bias) => {
                send(*x, g.clone());
                let n = val(*bias).numel();
                let mut db = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (acc, v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                send(*bias, Tensor::vector(db));
            }
            Op::LogSoftmax(a, axis) => {
                let out = &node.value;
                let (outer, n, inner) = axis_layout(out.shape(), *axis);
                let mut d = vec![0.0; out.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let gsum: f64 = (0..n).map(|j| g.data()[idx(j)]).sum();
                        for j in 0..n {
                            d[idx(j)] = g.data()[idx(j)] - out.data()[idx(j)].exp() * gsum;
                        }
                    }
                }
                send(*a, Tensor::new(out.shape().to_vec(), d).expect("log_softmax grad"));
            }
            Op::Reduce(kind, a, axis) => {
                let ta = val(*a);
                let d = match axis {
                    None => {
                        let scale = match kind {
                            Reduction::Sum => 1.0,
                            Reduction::Mean => 1.0 / ta.numel() as f64,
                        };
                        Tensor::full(ta.shape(), g.data()[0] * scale)
                    }
                    Some(axis) => {
                        let (outer, n, inner) = axis_layout(ta.shape(), *axis);
                        let scale = match kind {
                            Reduction::Sum => 1.0,
                            Reduction::Mean => 1.0 / n as f64,
                        };
                        let mut d = vec![0.0; ta.numel()];
                        for o in 0..outer {
                            for j in 0..n {
                                for i in 0..inner {
                                    d[(o * n + j) * inner + i] = g.data()[o * inner + i] * scale;
                                }
                            }
                        }
                        Tensor::new(ta.shape().to_vec(), d).expect("reduce grad")
                    }
                };
                send(*a, d);
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = axis_layout(g.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let tp = val(p);
                    let w = tp.shape()[*axis];
                    let mut d = Vec::with_capacity(tp.numel());
                    for o in 0..outer {
                        let from = (o * total + offset) * inner;
                        d.extend_from_slice(&g.data()[from..from + w * inner]);
                    }
                    offset += w;
                    send(p, Tensor::new(tp.shape().to_vec(), d).expect("concat grad"));
                }
            }
            Op::Narrow(a, axis, start) => {
                let ta = val(*a);
                let (outer, n, inner) = axis_layout(ta.shape(), *axis);
                let len = g.shape()[*axis];
                let mut d = vec![0.0; ta.numel()];
                for o in 0..outer {
                    let to = (o * n + start) * inner;
                    let from = o * len * inner;
                    d[to..to + len * inner].copy_from_slice(&g.data()[from..from + len * inner]);
                }
                send(*a, Tensor::new(ta.shape().to_vec(), d).expect("narrow grad"));
            }
            Op::Reshape(a) => {
                send(*a, g.reshape(val(*a).shape()).expect("reshape grad"));
            }
        }
    }
}
