use std::collections::HashMap;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{ArtError, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul { a: Var, b: Var, shared_rhs: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var },
    Scale { x: Var, factor: f64 },
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, axis: usize },
    MeanAxis { x: Var, axis: usize },
    Softmax { x: Var, axis: usize },
    MaskedSoftmax { x: Var, axis: usize },
    Sigmoid(Var),
    Gelu(Var),
    NormLast(Var),
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Expand { x: Var, axis: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Cumsum { x: Var, axis: usize },
    MinAxis { x: Var, axis: usize, argmin: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Computation tape for one forward pass.
///
/// A graph is single-threaded; independent scenes use independent graphs.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
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

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Records a leaf. It receives a gradient only if `tensor.requires_grad()`.
    pub fn input(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let mut t = tensor;
        t.set_requires_grad(false);
        self.push(t, Op::Leaf, false)
    }

    /// Records a parameter leaf, reusing the node when already on the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = &store.get(id).tensor;
        let value = Tensor::new(t.shape(), t.data().to_vec()).expect("param shape");
        let v = self.push(value, Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn param_by_name(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store
            .id(name)
            .ok_or_else(|| ArtError::Contract(format!("unknown parameter `{name}`")))?;
        Ok(self.param(store, id))
    }

    /// Matrix product over the last two axes.
    ///
    /// `a` is `[.., m, k]`; `b` is either `[k, n]` (shared across the batch)
    /// or `[.., k, n]` with identical leading axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(ArtError::shape("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let shared_rhs = sb.len() == 2;
        if k != kb || (!shared_rhs && sa[..sa.len() - 2] != sb[..sb.len() - 2]) {
            return Err(ArtError::shape("matmul", &sa, &sb));
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut out = vec![0.0; batch * m * n];
        let (ad, bd) = (self.data(a), self.data(b));
        for bi in 0..batch {
            let ab = &ad[bi * m * k..(bi + 1) * m * k];
            let bb = if shared_rhs {
                bd
            } else {
                &bd[bi * k * n..(bi + 1) * k * n]
            };
            kernel::gemm_nn(ab, bb, &mut out[bi * m * n..(bi + 1) * m * n], m, k, n);
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([m, n]);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::MatMul { a, b, shared_rhs },
            rg,
        ))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        if self.shape(a) != self.shape(b) {
            return Err(ArtError::shape(name, self.shape(a), self.shape(b)));
        }
        Ok(self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Mul(a, b), rg))
    }

    /// Adds a `[n]` bias along the last axis of `x` (`[.., n]`).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        if sb.len() != 1 || sx.last() != sb.first() {
            return Err(ArtError::shape("add_bias", &sx, &sb));
        }
        let n = sb[0];
        let bd = self.data(bias);
        let out: Vec<f64> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % n])
            .collect();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::new(&sx, out)?, Op::AddBias { x, bias }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let shape = self.shape(x).to_vec();
        let out = self.data(x).iter().map(|v| v * factor).collect();
        let rg = self.rg(x);
        self.push(Tensor::new(&shape, out).unwrap(), Op::Scale { x, factor }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    fn reduce_axis(&self, x: Var, axis: usize, name: &'static str) -> Result<(Vec<usize>, usize, usize, usize)> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(ArtError::shape(name, shape, &[axis]));
        }
        let (outer, len, inner) = split_axis(shape, axis);
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        Ok((out_shape, outer, len, inner))
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (shape, outer, len, inner) = self.reduce_axis(x, axis, "sum_axis")?;
        let d = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &d[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += s;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::SumAxis { x, axis }, rg))
    }

    /// Averages over `axis`, removing it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.sum_axis(x, axis)?;
        let len = self.shape(x)[axis] as f64;
        // Fold the summed node into a mean node so the tape stays one op.
        let node = self.nodes.pop().expect("sum node");
        debug_assert_eq!(s.0, self.nodes.len());
        let mut value = node.value;
        value.data_mut().iter_mut().for_each(|v| *v /= len);
        Ok(self.push(value, Op::MeanAxis { x, axis }, node.requires_grad))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(ArtError::shape("softmax", &shape, &[axis]));
        }
        if !self.value(x).all_finite() {
            return Err(ArtError::Numeric("softmax input is not finite".into()));
        }
        let out = kernel::softmax(self.data(x), &shape, axis, None)?;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Softmax { x, axis }, rg))
    }

    /// Softmax along `axis` restricted to entries where `mask` is true.
    ///
    /// Masked-out entries get exactly zero probability and zero gradient.
    /// Every reduction slice must keep at least one entry.
    pub fn masked_softmax(&mut self, x: Var, axis: usize, mask: &[bool]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || mask.len() != self.value(x).numel() {
            return Err(ArtError::shape("masked_softmax", &shape, &[axis, mask.len()]));
        }
        let finite = self
            .data(x)
            .iter()
            .zip(mask)
            .all(|(v, &m)| !m || v.is_finite());
        if !finite {
            return Err(ArtError::Numeric("masked_softmax input is not finite".into()));
        }
        let out = kernel::softmax(self.data(x), &shape, axis, Some(mask))?;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MaskedSoftmax { x, axis }, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let out = self.data(x).iter().map(|&v| kernel::sigmoid(v)).collect();
        let rg = self.rg(x);
        self.push(Tensor::new(&shape, out).unwrap(), Op::Sigmoid(x), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let out = self.data(x).iter().map(|&v| kernel::gelu(v).0).collect();
        let rg = self.rg(x);
        self.push(Tensor::new(&shape, out).unwrap(), Op::Gelu(x), rg)
    }

    /// Euclidean norm over the last axis. The gradient at a zero vector is
    /// taken as zero.
    pub fn norm_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() {
            return Err(ArtError::shape("norm_last", &shape, &[]));
        }
        let n = *shape.last().unwrap();
        let out = self
            .data(x)
            .chunks(n)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&shape[..shape.len() - 1], out)?,
            Op::NormLast(x),
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(ArtError::shape("permute", &shape, perm));
        }
        let (out, out_shape) = kernel::permute(self.data(x), &shape, perm);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    /// Swaps the first two axes.
    pub fn transpose01(&mut self, x: Var) -> Result<Var> {
        let nd = self.shape(x).len();
        let mut perm: Vec<usize> = (0..nd).collect();
        if nd < 2 {
            return Err(ArtError::shape("transpose01", self.shape(x), &[]));
        }
        perm.swap(0, 1);
        self.permute(x, &perm)
    }

    /// Inserts a new axis of extent `n` at `axis`, repeating `x` along it.
    pub fn expand(&mut self, x: Var, axis: usize, n: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis > shape.len() {
            return Err(ArtError::shape("expand", &shape, &[axis]));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis..].iter().product();
        let d = self.data(x);
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let chunk = &d[o * inner..(o + 1) * inner];
            for _ in 0..n {
                out.extend_from_slice(chunk);
            }
        }
        let mut out_shape = shape;
        out_shape.insert(axis, n);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::Expand { x, axis }, rg))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| ArtError::Contract("concat of nothing".into()))?)
            .to_vec();
        if axis >= first.len() {
            return Err(ArtError::shape("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(ArtError::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Inclusive running sum along `axis`.
    pub fn cumsum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(ArtError::shape("cumsum", &shape, &[axis]));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut out = self.data(x).to_vec();
        for o in 0..outer {
            for a in 1..len {
                for i in 0..inner {
                    let prev = out[(o * len + a - 1) * inner + i];
                    out[(o * len + a) * inner + i] += prev;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Cumsum { x, axis }, rg))
    }

    /// Minimum over `axis`; ties resolve to the lowest index, which alone
    /// receives the gradient.
    pub fn min_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (shape, outer, len, inner) = self.reduce_axis(x, axis, "min_axis")?;
        let d = self.data(x);
        let mut out = vec![f64::INFINITY; outer * inner];
        let mut argmin = vec![0usize; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                for i in 0..inner {
                    let v = d[(o * len + a) * inner + i];
                    let slot = o * inner + i;
                    if v < out[slot] {
                        out[slot] = v;
                        argmin[slot] = a;
                    }
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MinAxis { x, axis, argmin }, rg))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(ArtError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.rg(v) {
                return;
            }
            let n = self.value(v).numel();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(buf);
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul { a, b, shared_rhs } => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let batch = self.value(*a).numel() / (m * k);
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, &mut |ga| {
                    for bi in 0..batch {
                        let bb = if *shared_rhs { bd } else { &bd[bi * k * n..(bi + 1) * k * n] };
                        kernel::gemm_nt_acc(
                            &g[bi * m * n..(bi + 1) * m * n],
                            bb,
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                });
                acc(*b, &mut |gb| {
                    for bi in 0..batch {
                        let dst = if *shared_rhs {
                            &mut gb[..]
                        } else {
                            &mut gb[bi * k * n..(bi + 1) * k * n]
                        };
                        kernel::gemm_tn_acc(
                            &ad[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            dst,
                            m,
                            k,
                            n,
                        );
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| kernel::axpy(ga, g, 1.0));
                acc(*b, &mut |gb| kernel::axpy(gb, g, 1.0));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| kernel::axpy(ga, g, 1.0));
                acc(*b, &mut |gb| kernel::axpy(gb, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, &mut |ga| {
                    for ((d, gv), bv) in ga.iter_mut().zip(g).zip(bd) {
                        *d += gv * bv;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((d, gv), av) in gb.iter_mut().zip(g).zip(ad) {
                        *d += gv * av;
                    }
                });
            }
            Op::AddBias { x, bias } => {
                acc(*x, &mut |gx| kernel::axpy(gx, g, 1.0));
                let n = self.value(*bias).numel();
                acc(*bias, &mut |gb| {
                    for row in g.chunks(n) {
                        kernel::axpy(gb, row, 1.0);
                    }
                });
            }
            Op::Scale { x, factor } => acc(*x, &mut |gx| kernel::axpy(gx, g, *factor)),
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                acc(*x, &mut |gx| gx.iter_mut().for_each(|v| *v += g[0] / n));
            }
            Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                let scale = match node.op {
                    Op::MeanAxis { .. } => 1.0 / len as f64,
                    _ => 1.0,
                };
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for a in 0..len {
                            let dst = &mut gx[(o * len + a) * inner..(o * len + a + 1) * inner];
                            kernel::axpy(dst, src, scale);
                        }
                    }
                });
            }
            Op::Softmax { x, axis } | Op::MaskedSoftmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| (o * len + a) * inner + i;
                            let dot: f64 = (0..len).map(|a| g[at(a)] * y[at(a)]).sum();
                            for a in 0..len {
                                gx[at(a)] += y[at(a)] * (g[at(a)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, &mut |gx| {
                    for ((d, gv), yv) in gx.iter_mut().zip(g).zip(y) {
                        *d += gv * yv * (1.0 - yv);
                    }
                });
            }
            Op::Gelu(x) => {
                let xd = self.data(*x);
                acc(*x, &mut |gx| {
                    for ((d, gv), xv) in gx.iter_mut().zip(g).zip(xd) {
                        *d += gv * kernel::gelu(*xv).1;
                    }
                });
            }
            Op::NormLast(x) => {
                let xd = self.data(*x);
                let n = *self.shape(*x).last().unwrap();
                let norms = node.value.data();
                acc(*x, &mut |gx| {
                    for (r, (&nv, &gv)) in norms.iter().zip(g).enumerate() {
                        if nv > 0.0 {
                            for c in 0..n {
                                gx[r * n + c] += gv * xd[r * n + c] / nv;
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |gx| kernel::axpy(gx, g, 1.0)),
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let (back, _) = kernel::permute(g, node.value.shape(), &inv);
                acc(*x, &mut |gx| kernel::axpy(gx, &back, 1.0));
            }
            Op::Expand { x, axis } => {
                let shape = node.value.shape();
                let n = shape[*axis];
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let dst = &mut gx[o * inner..(o + 1) * inner];
                        for a in 0..n {
                            kernel::axpy(dst, &g[(o * n + a) * inner..(o * n + a + 1) * inner], 1.0);
                        }
                    }
                });
            }
            Op::Concat { xs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut start = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis] * inner;
                    acc(v, &mut |gv| {
                        for o in 0..outer {
                            let src = &g[o * total + start..o * total + start + len];
                            kernel::axpy(&mut gv[o * len..(o + 1) * len], src, 1.0);
                        }
                    });
                    start += len;
                }
            }
            Op::Cumsum { x, axis } => {
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let mut running = 0.0;
                            for a in (0..len).rev() {
                                let at = (o * len + a) * inner + i;
                                running += g[at];
                                gx[at] += running;
                            }
                        }
                    }
                });
            }
            Op::MinAxis { x, axis, argmin } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let slot = o * inner + i;
                            gx[(o * len + argmin[slot]) * inner + i] += g[slot];
                        }
                    }
                });
            }
        }
    }
}

/// Gradient buffers produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into the store. Parameters the loss does not
    /// reach end up with a zero buffer.
    pub fn accumulate_into(&self, graph: &Graph, store: &mut ParamStore) {
        for p in store.iter_mut() {
            if p.tensor.grad().is_none() {
                p.tensor.zero_grad();
            }
        }
        for (id, v) in &graph.params {
            if let Some(g) = self.wrt(*v) {
                store.get_mut(*id).tensor.accumulate_grad(g);
            }
        }
    }

    /// Per-parameter gradients in store order; `None` where unreachable.
    pub fn param_grads(&self, graph: &Graph, n_params: usize) -> Vec<Option<Vec<f64>>> {
        let mut out = vec![None; n_params];
        for (id, v) in &graph.params {
            out[id.0] = self.wrt(*v).map(<[f64]>::to_vec);
        }
        out
    }
}

pub(crate) mod kernel {
    use crate::error::{ArtError, Result};

    pub fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
        debug_assert_eq!(dst.len(), src.len());
        for (d, s) in dst.iter_mut().zip(src) {
            *d += alpha * s;
        }
    }

    /// `c = a · b` with `a: m×k`, `b: k×n`.
    pub fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let row = &mut c[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av != 0.0 {
                    axpy(row, &b[p * n..(p + 1) * n], av);
                }
            }
        }
    }

    /// `c += a · bᵀ` with `a: m×n`, `b: k×n`, `c: m×k`.
    pub fn gemm_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
        for i in 0..m {
            let ar = &a[i * n..(i + 1) * n];
            for p in 0..k {
                let br = &b[p * n..(p + 1) * n];
                c[i * k + p] += ar.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    }

    /// `c += aᵀ · g` with `a: m×k`, `g: m×n`, `c: k×n`.
    pub fn gemm_tn_acc(a: &[f64], g: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let gr = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av != 0.0 {
                    axpy(&mut c[p * n..(p + 1) * n], gr, av);
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

    /// GELU (tanh form) and its derivative.
    pub fn gelu(x: f64) -> (f64, f64) {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        let u = C * (x + 0.044715 * x * x * x);
        let t = u.tanh();
        let y = 0.5 * x * (1.0 + t);
        let du = C * (1.0 + 3.0 * 0.044715 * x * x);
        let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        (y, dy)
    }

    pub fn softmax(x: &[f64], shape: &[usize], axis: usize, mask: Option<&[bool]>) -> Result<Vec<f64>> {
        let (outer, len, inner) = super::split_axis(shape, axis);
        let keep = |i: usize| mask.map_or(true, |m| m[i]);
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let max = (0..len)
                    .filter(|&a| keep(at(a)))
                    .map(|a| x[at(a)])
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return Err(ArtError::Contract("softmax slice has no unmasked entry".into()));
                }
                let mut total = 0.0;
                for a in 0..len {
                    if keep(at(a)) {
                        let e = (x[at(a)] - max).exp();
                        out[at(a)] = e;
                        total += e;
                    }
                }
                for a in 0..len {
                    out[at(a)] /= total;
                }
            }
        }
        Ok(out)
    }

    /// Returns the permuted data and its shape.
    pub fn permute(x: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let nd = shape.len();
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let mut in_strides = vec![1usize; nd];
        for i in (0..nd.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * shape[i + 1];
        }
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = Vec::with_capacity(x.len());
        if x.is_empty() {
            return (out, out_shape);
        }
        let mut idx = vec![0usize; nd];
        let mut off = 0usize;
        let last = nd.saturating_sub(1);
        loop {
            if nd == 0 {
                out.push(x[0]);
                break;
            }
            // innermost axis as a strided run
            let s = strides[last];
            for r in 0..out_shape[last] {
                out.push(x[off + r * s]);
            }
            // advance the remaining axes
            let mut ax = last;
            loop {
                if ax == 0 {
                    return (out, out_shape);
                }
                ax -= 1;
                idx[ax] += 1;
                off += strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                off -= strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        (out, out_shape)
    }
}
