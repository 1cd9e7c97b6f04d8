//! Append-only computation tape with reverse-mode differentiation.
//!
//! Every operation appends one node holding its output value and the ids of
//! its inputs. Append order is a topological order, so `backward` is a single
//! reverse sweep. Leaves are inputs, constants, parameters, and sampled noise;
//! only leaves created with `requires_grad` accumulate gradients.

use std::sync::Arc;

use super::{gemm, Operand, Tensor};
use crate::error::{Error, Result};
use crate::math;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { key: Option<usize> },
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Ln(Var),
    Exp(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Reshape(Var),
    ClampMin(Var, f64),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    BiasAdd(Var, Var),
    BroadcastRows(Var),
    SoftmaxCrossEntropy { logits: Var, labels: Arc<Vec<usize>>, probs: Tensor },
    MeanSquaredError { pred: Var, target: Tensor },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
    visits: Vec<u32>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf { key: None }, requires_grad)
    }

    /// Leaf that never receives a gradient (inputs, sampled noise).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Trainable leaf tagged with a caller-chosen key, see [`Graph::param_grads`].
    pub fn param(&mut self, key: usize, value: Tensor) -> Var {
        self.push(value, Op::Leaf { key: Some(key) }, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of all keyed parameter leaves reached by backward.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &Tensor)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Leaf { key: Some(k) } => self.grad(Var(i)).map(|g| (k, g)),
            _ => None,
        })
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    /// How many times backward has processed each node.
    pub fn visit_counts(&self) -> &[u32] {
        &self.visits
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        let rg = self.needs(x);
        self.push(value, op, rg)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let value = if va.shape() == vb.shape() {
            va.zip_map(vb, f)?
        } else if vb.numel() == 1 {
            let s = vb.data()[0];
            va.map(|x| f(x, s))
        } else if va.numel() == 1 {
            let s = va.data()[0];
            vb.map(|y| f(s, y))
        } else {
            return Err(Error::shape(name, va.shape(), vb.shape()));
        };
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Op::Neg(x), |v| -v)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), math::sigmoid)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus(x), math::softplus)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        if let Some(&bad) = self.value(x).data().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Domain {
                op: "ln",
                value: bad,
                domain: "x > 0",
            });
        }
        Ok(self.unary(x, Op::Ln(x), f64::ln))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    /// Same data under a new shape with the same number of elements.
    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, Op::ClampMin(x, floor), |v| v.max(floor))
    }

    /// `a·b` for matrices `a: M×K`, `b: K×N`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a·bᵀ` for matrices `a: M×K`, `b: N×K`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let name = if trans_b { "matmul_t" } else { "matmul" };
        let (m, k) = va
            .dims2()
            .map_err(|_| Error::shape(name, va.shape(), vb.shape()))?;
        let (br, bc) = vb
            .dims2()
            .map_err(|_| Error::shape(name, va.shape(), vb.shape()))?;
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape(name, va.shape(), vb.shape()));
        }
        let opb = if trans_b {
            Operand::t(vb.data(), br, bc)
        } else {
            Operand::plain(vb.data(), br, bc)
        };
        let mut out = vec![0.0; m * n];
        gemm(Operand::plain(va.data(), m, k), opb, 0.0, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul { a, b, trans_b }, rg))
    }

    /// Sum over all elements (`axis = None`) or along one axis.
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let value = reduce(self.value(x), axis, false)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::Sum(x, axis), rg))
    }

    /// Mean over all elements (`axis = None`) or along one axis.
    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let value = reduce(self.value(x), axis, true)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::Mean(x, axis), rg))
    }

    /// Adds the vector `b: [K]` to every row of `x: [N×K]`.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        let (n, k) = vx
            .dims2()
            .map_err(|_| Error::shape("bias_add", vx.shape(), vb.shape()))?;
        if vb.shape() != [k] {
            return Err(Error::shape("bias_add", vx.shape(), vb.shape()));
        }
        let bias = vb.data();
        let mut out = vx.data().to_vec();
        for row in out.chunks_mut(k.max(1)).take(n) {
            for (o, &c) in row.iter_mut().zip(bias) {
                *o += c;
            }
        }
        let value = Tensor::new(vec![n, k], out)?;
        let rg = self.needs(x) || self.needs(b);
        Ok(self.push(value, Op::BiasAdd(x, b), rg))
    }

    /// Repeats the vector `v: [K]` as `n` rows.
    pub fn broadcast_rows(&mut self, v: Var, n: usize) -> Result<Var> {
        let vv = self.value(v);
        let k = match vv.shape() {
            &[k] => k,
            other => return Err(Error::shape("broadcast_rows", other, &[n])),
        };
        let mut out = Vec::with_capacity(n * k);
        for _ in 0..n {
            out.extend_from_slice(vv.data());
        }
        let value = Tensor::new(vec![n, k], out)?;
        let rg = self.needs(v);
        Ok(self.push(value, Op::BroadcastRows(v), rg))
    }

    /// Batch mean of `−ln softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        let (n, c) = vl.dims2()?;
        if labels.len() != n {
            return Err(Error::shape("softmax_cross_entropy", vl.shape(), &[labels.len()]));
        }
        if n == 0 {
            return Err(Error::EmptyBatch("softmax_cross_entropy"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Index {
                what: "label",
                index: bad,
                bound: c,
            });
        }
        let mut probs = vl.data().to_vec();
        let mut loss = 0.0;
        for (row, &y) in probs.chunks_mut(c).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v -= max;
                z += v.exp();
            }
            let lz = z.ln();
            loss += lz - row[y];
            for v in row.iter_mut() {
                *v = (*v - lz).exp();
            }
        }
        let probs = Tensor::new(vec![n, c], probs)?;
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: Arc::new(labels.to_vec()),
                probs,
            },
            rg,
        ))
    }

    /// Mean of `(pred − target)²` over all elements.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let vp = self.value(pred);
        if vp.shape() != target.shape() {
            return Err(Error::shape("mse", vp.shape(), target.shape()));
        }
        if vp.numel() == 0 {
            return Err(Error::EmptyBatch("mse"));
        }
        let sse: f64 = vp
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let value = Tensor::scalar(sse / vp.numel() as f64);
        let rg = self.needs(pred);
        Ok(self.push(
            value,
            Op::MeanSquaredError {
                pred,
                target: target.clone(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`, accumulating into leaf gradients.
    ///
    /// Calling it again without [`Graph::zero_grad`] adds to the existing
    /// gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let seed_shape = lv.shape().to_vec();
        let n = loss.0 + 1;
        if self.visits.len() < self.nodes.len() {
            self.visits.resize(self.nodes.len(), 0);
        }
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize(self.nodes.len(), None);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::full(seed_shape, 1.0));

        for i in (0..n).rev() {
            self.visits[i] += 1;
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let val = |v: Var| &nodes[v.0].value;
            let mut send = |v: Var, t: Tensor| {
                if nodes[v.0].requires_grad {
                    accumulate(&mut grads[v.0], t);
                }
            };
            match &node.op {
                Op::Leaf { .. } => {
                    accumulate(&mut self.leaf_grads[i], g);
                }
                &Op::Add(a, b) => {
                    send(a, fit_to(&g, val(a)));
                    send(b, fit_to(&g, val(b)));
                }
                &Op::Sub(a, b) => {
                    send(a, fit_to(&g, val(a)));
                    send(b, fit_to(&g.scale(-1.0), val(b)));
                }
                &Op::Mul(a, b) => {
                    if nodes[a.0].requires_grad {
                        send(a, fit_to(&broadcast_mul(&g, val(b)), val(a)));
                    }
                    if nodes[b.0].requires_grad {
                        send(b, fit_to(&broadcast_mul(&g, val(a)), val(b)));
                    }
                }
                &Op::Neg(x) => send(x, g.scale(-1.0)),
                &Op::Relu(x) => {
                    send(x, zip(&g, val(x), |g, x| if x > 0.0 { g } else { 0.0 }))
                }
                &Op::Sigmoid(x) => {
                    send(x, zip(&g, &node.value, |g, s| g * s * (1.0 - s)))
                }
                &Op::Softplus(x) => send(x, zip(&g, val(x), |g, x| g * math::sigmoid(x))),
                &Op::Ln(x) => send(x, zip(&g, val(x), |g, x| g / x)),
                &Op::Exp(x) => send(x, zip(&g, &node.value, |g, y| g * y)),
                &Op::Scale(x, c) => send(x, g.scale(c)),
                &Op::AddScalar(x) => send(x, g),
                &Op::Reshape(x) => send(x, g.reshape(val(x).shape().to_vec())?),
                &Op::ClampMin(x, floor) => {
                    send(x, zip(&g, val(x), |g, x| if x > floor { g } else { 0.0 }))
                }
                &Op::Sum(x, axis) => send(x, expand(&g, val(x).shape(), axis, 1.0)),
                &Op::Mean(x, axis) => {
                    let shape = val(x).shape();
                    let count = match axis {
                        None => shape.iter().product::<usize>(),
                        Some(ax) => shape[ax],
                    };
                    send(x, expand(&g, shape, axis, 1.0 / count as f64))
                }
                &Op::BiasAdd(x, b) => {
                    if nodes[b.0].requires_grad {
                        send(b, column_sums(&g));
                    }
                    send(x, g);
                }
                &Op::BroadcastRows(v) => send(v, column_sums(&g)),
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let (rows, c) = (probs.shape()[0], probs.shape()[1]);
                    let scale = g.data()[0] / rows as f64;
                    let mut d = probs.data().to_vec();
                    for (row, &y) in d.chunks_mut(c).zip(labels.iter()) {
                        row[y] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= scale;
                        }
                    }
                    send(*logits, Tensor::new(probs.shape().to_vec(), d)?);
                }
                Op::MeanSquaredError { pred, target } => {
                    let p = val(*pred);
                    let scale = 2.0 * g.data()[0] / p.numel() as f64;
                    send(*pred, p.zip_map(target, |p, t| scale * (p - t))?);
                }
                &Op::MatMul { a, b, trans_b } => {
                    let (va, vb) = (val(a), val(b));
                    let (m, k) = (va.shape()[0], va.shape()[1]);
                    let (br, bc) = (vb.shape()[0], vb.shape()[1]);
                    let ncols = g.shape()[1];
                    if nodes[a.0].requires_grad {
                        // dA = G·op(B)ᵀ
                        let opb = if trans_b {
                            Operand::plain(vb.data(), br, bc)
                        } else {
                            Operand::t(vb.data(), br, bc)
                        };
                        let mut da = vec![0.0; m * k];
                        gemm(Operand::plain(g.data(), m, ncols), opb, 0.0, &mut da);
                        send(a, Tensor::new(vec![m, k], da)?);
                    }
                    if nodes[b.0].requires_grad {
                        let mut db = vec![0.0; br * bc];
                        if trans_b {
                            // B: N×K, dB = Gᵀ·A
                            gemm(
                                Operand::t(g.data(), m, ncols),
                                Operand::plain(va.data(), m, k),
                                0.0,
                                &mut db,
                            );
                        } else {
                            // B: K×N, dB = Aᵀ·G
                            gemm(
                                Operand::t(va.data(), m, k),
                                Operand::plain(g.data(), m, ncols),
                                0.0,
                                &mut db,
                            );
                        }
                        send(b, Tensor::new(vec![br, bc], db)?);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Tensor>, t: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
        }
        None => *slot = Some(t),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    a.zip_map(b, f).expect("gradient shape matches value shape")
}

/// `g ⊙ other`, where `other` may be a one-element tensor.
fn broadcast_mul(g: &Tensor, other: &Tensor) -> Tensor {
    if other.numel() == 1 {
        g.scale(other.data()[0])
    } else if g.numel() == 1 {
        other.scale(g.data()[0])
    } else {
        zip(g, other, |a, b| a * b)
    }
}

/// Reduces a broadcast gradient back to the shape of a one-element operand.
fn fit_to(g: &Tensor, target: &Tensor) -> Tensor {
    if g.shape() == target.shape() {
        g.clone()
    } else {
        Tensor::full(target.shape().to_vec(), g.sum())
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let (n, k) = (g.shape()[0], g.shape()[1]);
    let mut out = vec![0.0; k];
    for row in g.data().chunks(k.max(1)).take(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::from_vec(out)
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduce(t: &Tensor, axis: Option<usize>, mean: bool) -> Result<Tensor> {
    match axis {
        None => {
            let s = t.sum();
            Ok(Tensor::scalar(if mean { s / t.numel() as f64 } else { s }))
        }
        Some(ax) => {
            if ax >= t.ndim() {
                return Err(Error::Index {
                    what: "axis",
                    index: ax,
                    bound: t.ndim(),
                });
            }
            let (outer, extent, inner) = split_axis(t.shape(), ax);
            let mut out = vec![0.0; outer * inner];
            let d = t.data();
            for o in 0..outer {
                for e in 0..extent {
                    let base = (o * extent + e) * inner;
                    for i in 0..inner {
                        out[o * inner + i] += d[base + i];
                    }
                }
            }
            if mean {
                for v in out.iter_mut() {
                    *v /= extent as f64;
                }
            }
            let mut shape = t.shape().to_vec();
            shape.remove(ax);
            Tensor::new(shape, out)
        }
    }
}

/// Inverse of `reduce` for gradients: broadcasts `g` back over the reduced axis.
fn expand(g: &Tensor, shape: &[usize], axis: Option<usize>, factor: f64) -> Tensor {
    match axis {
        None => Tensor::full(shape.to_vec(), g.data()[0] * factor),
        Some(ax) => {
            let (outer, extent, inner) = split_axis(shape, ax);
            let gd = g.data();
            let mut out = Vec::with_capacity(outer * extent * inner);
            for o in 0..outer {
                for _ in 0..extent {
                    out.extend(gd[o * inner..(o + 1) * inner].iter().map(|v| v * factor));
                }
            }
            Tensor::new(shape.to_vec(), out).expect("expanded extent")
        }
    }
}
