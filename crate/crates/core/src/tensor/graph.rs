use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{numel, strides, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::real::Real;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x + y` with `y` repeated over the leading axes of `x`.
    AddBroadcast(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Square(Var),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Bmm { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, transpose_b: bool },
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Concat { inputs: Vec<Var>, axis: usize },
    Mean { x: Var, outer: usize, extent: usize, inner: usize },
    SumAll(Var),
    MeanAll(Var),
    Reshape(Var),
    /// `out[o] = x[map[o]]`; covers slicing, permutation, broadcasting and gathers.
    Take { x: Var, map: Vec<usize> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run record of tensor operations in topological (insertion) order.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let value = value.with_requires_grad(requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers a leaf. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("lhs {:?} vs rhs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let rg = self.rg(a) || self.rg(b);
        self.push(t, op, rg)
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `x + y` where the shape of `y` is a trailing suffix of the shape of `x`
    /// (bias vectors, positional tables).
    pub fn add_broadcast(&mut self, x: Var, y: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ys = self.shape(y);
        if ys.len() > xs.len() || xs[xs.len() - ys.len()..] != *ys {
            return Err(shape_err(
                "add_broadcast",
                format!("{:?} is not a trailing suffix of {:?}", ys, xs),
            ));
        }
        let n = self.value(y).numel();
        let yd = self.data(y);
        let data = self.data(x).iter().enumerate().map(|(i, &v)| v + yd[i % n]).collect();
        let t = Tensor::new(xs.to_vec(), data).expect("same shape");
        let rg = self.rg(x) || self.rg(y);
        Ok(self.push(t, Op::AddBroadcast(x, y), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    /// Rectifier; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let c = T::of(GELU_C);
        let a = T::of(GELU_A);
        let half = T::of(0.5);
        self.unary(x, Op::Gelu(x), |v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// `a[.., k] @ b[k, n] -> [.., n]`; leading axes of `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ash = self.shape(a).to_vec();
        let bsh = self.shape(b).to_vec();
        if ash.len() < 2 || bsh.len() != 2 || ash[ash.len() - 1] != bsh[0] {
            return Err(shape_err("matmul", format!("lhs {:?} @ rhs {:?}: inner axes disagree", ash, bsh)));
        }
        let k = bsh[0];
        let n = bsh[1];
        let m = numel(&ash[..ash.len() - 1]);
        let mut out = vec![T::zero(); m * n];
        matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let mut shape = ash;
        *shape.last_mut().expect("rank >= 2") = n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b, m, k, n }, rg))
    }

    /// Batched product `a[B, m, k] @ b[B, k, n] -> [B, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bmm_impl(a, b, false)
    }

    /// Batched product with the right operand transposed:
    /// `a[B, m, k] @ b[B, n, k]^T -> [B, m, n]`.
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bmm_impl(a, b, true)
    }

    fn bmm_impl(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let name = if transpose_b { "bmm_nt" } else { "bmm" };
        let ash = self.shape(a).to_vec();
        let bsh = self.shape(b).to_vec();
        if ash.len() != 3 || bsh.len() != 3 || ash[0] != bsh[0] {
            return Err(shape_err(name, format!("lhs {:?}, rhs {:?}: need matching rank-3 batches", ash, bsh)));
        }
        let (batch, m, k) = (ash[0], ash[1], ash[2]);
        let (kb, n) = if transpose_b { (bsh[2], bsh[1]) } else { (bsh[1], bsh[2]) };
        if kb != k {
            return Err(shape_err(name, format!("lhs {:?}, rhs {:?}: inner axes disagree", ash, bsh)));
        }
        let ad = self.data(a);
        let bd = self.data(b);
        let mut out = vec![T::zero(); batch * m * n];
        for z in 0..batch {
            let aa = &ad[z * m * k..(z + 1) * m * k];
            let bb = &bd[z * k * n..(z + 1) * k * n];
            let oo = &mut out[z * m * n..(z + 1) * m * n];
            if transpose_b {
                matmul_nt_acc(aa, bb, oo, m, k, n);
            } else {
                matmul_acc(aa, bb, oo, m, k, n);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![batch, m, n], out)?, Op::Bmm { a, b, batch, m, k, n, transpose_b }, rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap_or(&1);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(n.max(1)) {
            let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s = s + *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out).expect("same shape"), Op::Softmax(x), rg)
    }

    /// Layer normalization over the last axis with gain `gamma` and shift `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err(
                "layer_norm",
                format!("input {:?} needs gamma/beta [{}], got {:?}/{:?}", shape, d, self.shape(gamma), self.shape(beta)),
            ));
        }
        let rows = numel(&shape) / d.max(1);
        let xd = self.data(x);
        let gd = self.data(gamma);
        let bd = self.data(beta);
        let dn = T::of(d as f64);
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
            rstd[r] = rs;
            for i in 0..d {
                let h = (row[i] - mean) * rs;
                xhat[r * d + i] = h;
                out[r * d + i] = h * gd[i] + bd[i];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = match inputs.first() {
            Some(&v) => self.shape(v).to_vec(),
            None => return Err(shape_err("concat", "no inputs".into())),
        };
        if axis >= first.len() {
            return Err(shape_err("concat", format!("axis {} out of range for {:?}", axis, first)));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let agree = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !agree {
                return Err(shape_err("concat", format!("axis {}: {:?} incompatible with {:?}", axis, s, first)));
            }
            total += s[axis];
        }
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let ext = self.shape(v)[axis];
                let d = self.data(v);
                out.extend_from_slice(&d[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(shape_err(
                "slice",
                format!("range {}..{} on axis {} of {:?}", start, start + len, axis, shape),
            ));
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let ext = shape[axis];
        let mut map = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ext + start) * inner;
            map.extend(base..base + len * inner);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.take(x, map, out_shape)
    }

    /// Splits along `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let ext = self.shape(x).get(axis).copied().unwrap_or(0);
        if sizes.iter().sum::<usize>() != ext {
            return Err(shape_err("split", format!("sizes {:?} do not sum to extent {}", sizes, ext)));
        }
        let mut start = 0;
        let mut parts = Vec::with_capacity(sizes.len());
        for &s in sizes {
            parts.push(self.slice(x, axis, start, s)?);
            start += s;
        }
        Ok(parts)
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(shape_err("mean", format!("axis {} invalid for {:?}", axis, shape)));
        }
        let outer = numel(&shape[..axis]);
        let extent = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let xd = self.data(x);
        let inv = T::one() / T::of(extent as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..extent {
                let src = &xd[(o * extent + a) * inner..(o * extent + a + 1) * inner];
                for (dst, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst = *dst + v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        let mut out_shape: Vec<usize> = shape[..axis].iter().chain(&shape[axis + 1..]).copied().collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Mean { x, outer, extent, inner }, rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(shape_err("mean_all", "empty tensor".into()));
        }
        let s = self.data(x).iter().copied().sum::<T>() / T::of(n as f64);
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::MeanAll(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).numel() {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", self.shape(x), shape)));
        }
        let t = Tensor::new(shape.to_vec(), self.data(x).to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || core::mem::replace(&mut seen[p], true)) {
            return Err(shape_err("permute", format!("{:?} is not a permutation of the axes of {:?}", perm, shape)));
        }
        let in_strides = strides(&shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let map = gather_map(&out_shape, &src_strides);
        self.take(x, map, out_shape)
    }

    /// Broadcasts with right-aligned axes; source extents must equal the
    /// target extent or be 1.
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x).to_vec();
        if src.len() > shape.len() {
            return Err(shape_err("broadcast_to", format!("{:?} -> {:?}: rank would shrink", src, shape)));
        }
        let lead = shape.len() - src.len();
        let src_st = strides(&src);
        let mut st = vec![0; shape.len()];
        for (i, (&e, &s)) in src.iter().zip(&src_st).enumerate() {
            let target = shape[lead + i];
            if e == target {
                st[lead + i] = s;
            } else if e != 1 {
                return Err(shape_err("broadcast_to", format!("{:?} -> {:?}: axis {} has extent {}", src, shape, i, e)));
            }
        }
        let map = gather_map(shape, &st);
        self.take(x, map, shape.to_vec())
    }

    /// Gathers flat elements: `out[i] = x.flat[indices[i]]`.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let n = self.value(x).numel();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(shape_err("gather", format!("index {} out of range for {} elements", bad, n)));
        }
        self.take(x, indices.to_vec(), vec![indices.len()])
    }

    fn take(&mut self, x: Var, map: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let xd = self.data(x);
        let data = map.iter().map(|&i| xd[i]).collect();
        let t = Tensor::new(shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Take { x, map }, rg))
    }

    /// Affine map over the last axis: `x @ w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_broadcast(y, b)
    }

    /// Reverse sweep from a scalar `loss`. Every `requires_grad` leaf ends
    /// with a populated gradient (zeros when not on a path to `loss`).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads[i].take().unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                node.value.set_grad(g);
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let nodes = &self.nodes;
        let rg = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if rg(*a) {
                    acc(grads, nodes, *a, |ga| axpy(ga, g, T::one()));
                }
                if rg(*b) {
                    acc(grads, nodes, *b, |gb| axpy(gb, g, T::one()));
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    acc(grads, nodes, *a, |ga| axpy(ga, g, T::one()));
                }
                if rg(*b) {
                    acc(grads, nodes, *b, |gb| axpy(gb, g, -T::one()));
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let bd = val(*b);
                    acc(grads, nodes, *a, |ga| ga.iter_mut().zip(g).zip(bd).for_each(|((d, &g), &y)| *d = *d + g * y));
                }
                if rg(*b) {
                    let ad = val(*a);
                    acc(grads, nodes, *b, |gb| gb.iter_mut().zip(g).zip(ad).for_each(|((d, &g), &y)| *d = *d + g * y));
                }
            }
            Op::AddBroadcast(x, y) => {
                if rg(*x) {
                    acc(grads, nodes, *x, |gx| axpy(gx, g, T::one()));
                }
                if rg(*y) {
                    acc(grads, nodes, *y, |gy| {
                        let n = gy.len();
                        for chunk in g.chunks(n) {
                            axpy(gy, chunk, T::one());
                        }
                    });
                }
            }
            Op::Scale(x, c) => acc(grads, nodes, *x, |gx| axpy(gx, g, *c)),
            Op::Relu(x) => {
                let xd = val(*x);
                acc(grads, nodes, *x, |gx| {
                    for ((d, &g), &v) in gx.iter_mut().zip(g).zip(xd) {
                        if v > T::zero() {
                            *d = *d + g;
                        }
                    }
                })
            }
            Op::Sigmoid(x) => acc(grads, nodes, *x, |gx| {
                for ((d, &g), &y) in gx.iter_mut().zip(g).zip(out) {
                    *d = *d + g * y * (T::one() - y);
                }
            }),
            Op::Tanh(x) => acc(grads, nodes, *x, |gx| {
                for ((d, &g), &y) in gx.iter_mut().zip(g).zip(out) {
                    *d = *d + g * (T::one() - y * y);
                }
            }),
            Op::Gelu(x) => {
                let xd = val(*x);
                let c = T::of(GELU_C);
                let a = T::of(GELU_A);
                let half = T::of(0.5);
                let three = T::of(3.0);
                acc(grads, nodes, *x, |gx| {
                    for ((d, &g), &v) in gx.iter_mut().zip(g).zip(xd) {
                        let t = (c * (v + a * v * v * v)).tanh();
                        let dv = half * (T::one() + t) + half * v * (T::one() - t * t) * c * (T::one() + three * a * v * v);
                        *d = *d + g * dv;
                    }
                })
            }
            Op::Square(x) => {
                let xd = val(*x);
                let two = T::of(2.0);
                acc(grads, nodes, *x, |gx| {
                    for ((d, &g), &v) in gx.iter_mut().zip(g).zip(xd) {
                        *d = *d + two * v * g;
                    }
                })
            }
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if rg(*a) {
                    let bd = val(*b);
                    // ga[m,k] += g[m,n] @ b[k,n]^T
                    acc(grads, nodes, *a, |ga| matmul_nt_acc(g, bd, ga, m, n, k));
                }
                if rg(*b) {
                    let ad = val(*a);
                    // gb[k,n] += a[m,k]^T @ g[m,n]
                    acc(grads, nodes, *b, |gb| matmul_tn_acc(ad, g, gb, m, k, n));
                }
            }
            Op::Bmm { a, b, batch, m, k, n, transpose_b } => {
                let (m, k, n) = (*m, *k, *n);
                let ad = val(*a);
                let bd = val(*b);
                if rg(*a) {
                    acc(grads, nodes, *a, |ga| {
                        for z in 0..*batch {
                            let gz = &g[z * m * n..(z + 1) * m * n];
                            let bz = &bd[z * k * n..(z + 1) * k * n];
                            let gaz = &mut ga[z * m * k..(z + 1) * m * k];
                            if *transpose_b {
                                // out = a b^T, b: [n,k] -> ga = g @ b
                                matmul_acc(gz, bz, gaz, m, n, k);
                            } else {
                                matmul_nt_acc(gz, bz, gaz, m, n, k);
                            }
                        }
                    });
                }
                if rg(*b) {
                    acc(grads, nodes, *b, |gb| {
                        for z in 0..*batch {
                            let gz = &g[z * m * n..(z + 1) * m * n];
                            let az = &ad[z * m * k..(z + 1) * m * k];
                            let gbz = &mut gb[z * k * n..(z + 1) * k * n];
                            if *transpose_b {
                                // gb[n,k] += g^T[n,m] @ a[m,k]
                                matmul_tn_acc(gz, az, gbz, m, n, k);
                            } else {
                                matmul_tn_acc(az, gz, gbz, m, k, n);
                            }
                        }
                    });
                }
            }
            Op::Softmax(x) => {
                let n = *node.value.shape().last().unwrap_or(&1);
                acc(grads, nodes, *x, |gx| {
                    for ((dr, gr), yr) in gx.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((d, &gv), &y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d = *d + y * (gv - dot);
                        }
                    }
                })
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = *node.value.shape().last().unwrap_or(&1);
                let gd = val(*gamma);
                if rg(*gamma) {
                    acc(grads, nodes, *gamma, |gg| {
                        for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                            for ((dst, &gv), &h) in gg.iter_mut().zip(gr).zip(hr) {
                                *dst = *dst + gv * h;
                            }
                        }
                    });
                }
                if rg(*beta) {
                    acc(grads, nodes, *beta, |gb| {
                        for gr in g.chunks(d) {
                            axpy(gb, gr, T::one());
                        }
                    });
                }
                if rg(*x) {
                    let dn = T::of(d as f64);
                    acc(grads, nodes, *x, |gx| {
                        for (r, ((dr, gr), hr)) in gx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate() {
                            let mut mean_dh = T::zero();
                            let mut mean_dh_h = T::zero();
                            for i in 0..d {
                                let dh = gr[i] * gd[i];
                                mean_dh = mean_dh + dh;
                                mean_dh_h = mean_dh_h + dh * hr[i];
                            }
                            mean_dh = mean_dh / dn;
                            mean_dh_h = mean_dh_h / dn;
                            for i in 0..d {
                                let dh = gr[i] * gd[i];
                                dr[i] = dr[i] + rstd[r] * (dh - mean_dh - hr[i] * mean_dh_h);
                            }
                        }
                    });
                }
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer = numel(&shape[..*axis]);
                let inner = numel(&shape[axis + 1..]);
                let total = shape[*axis];
                let mut offset = 0;
                for &v in inputs {
                    let ext = nodes[v.0].value.shape()[*axis];
                    if rg(v) {
                        acc(grads, nodes, v, |gv| {
                            for o in 0..outer {
                                let src = &g[(o * total + offset) * inner..(o * total + offset + ext) * inner];
                                axpy(&mut gv[o * ext * inner..(o + 1) * ext * inner], src, T::one());
                            }
                        });
                    }
                    offset += ext;
                }
            }
            Op::Mean { x, outer, extent, inner } => {
                let inv = T::one() / T::of(*extent as f64);
                acc(grads, nodes, *x, |gx| {
                    for o in 0..*outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for a in 0..*extent {
                            axpy(&mut gx[(o * extent + a) * inner..(o * extent + a + 1) * inner], src, inv);
                        }
                    }
                })
            }
            Op::SumAll(x) => acc(grads, nodes, *x, |gx| gx.iter_mut().for_each(|d| *d = *d + g[0])),
            Op::MeanAll(x) => {
                let n = T::of(nodes[x.0].value.numel() as f64);
                acc(grads, nodes, *x, |gx| gx.iter_mut().for_each(|d| *d = *d + g[0] / n))
            }
            Op::Reshape(x) => acc(grads, nodes, *x, |gx| axpy(gx, g, T::one())),
            Op::Take { x, map } => acc(grads, nodes, *x, |gx| {
                for (&src, &gv) in map.iter().zip(g) {
                    gx[src] = gx[src] + gv;
                }
            }),
        }
    }
}

fn acc<T: Real>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var, f: impl FnOnce(&mut [T])) {
    let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.numel()]);
    f(buf);
}

fn axpy<T: Real>(dst: &mut [T], src: &[T], a: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + a * s;
    }
}

/// Source offsets for every output position given per-output-axis source strides.
fn gather_map(out_shape: &[usize], src_strides: &[usize]) -> Vec<usize> {
    let n = numel(out_shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

/// `c[m,n] += a[m,k] @ b[k,n]`
fn matmul_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] @ b[n,k]^T`
fn matmul_nt_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = c[i * n + j] + dot(arow, brow);
        }
    }
}

/// Dot product with four independent partial sums.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: T = ac.remainder().iter().zip(bc.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for i in 0..4 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `c[k,n] += a[m,k]^T @ b[m,n]`
fn matmul_tn_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}
