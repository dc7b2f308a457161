use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom};
use super::{numel, split_axis, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceKind {
    Sum,
    Mean,
    /// Gradient flows to the first maximal element along the axis.
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    Recip(Var),
    Broadcast(Var),
    Reshape(Var),
    Matmul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    Reduce {
        x: Var,
        kind: ReduceKind,
        outer: usize,
        len: usize,
        inner: usize,
        argmax: Vec<usize>,
    },
    Narrow {
        x: Var,
        outer: usize,
        len_in: usize,
        inner: usize,
        start: usize,
        len: usize,
    },
    Subsample {
        x: Var,
        outer: usize,
        len_in: usize,
        inner: usize,
        step: usize,
        len: usize,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    // False for constants and for values computed only from constants.
    tracked: bool,
}

/// Record of a differentiable computation.
///
/// A tape is single-threaded; independent tapes may be used concurrently.
/// Values are appended in evaluation order, so the recorded graph is acyclic
/// by construction and reverse insertion order is a valid topological order
/// for the backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a value that receives gradients.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a value that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    /// Accumulated gradient, if any backward pass reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.node(v).grad.as_deref()
    }

    /// Accumulated gradient shaped like the value; zeros when absent.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let value = &self.node(v).value;
        match &self.node(v).grad {
            Some(g) => Tensor::new(value.shape().to_vec(), g.clone()).expect("grad length"),
            None => Tensor::zeros(value.shape()),
        }
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = &self.node(a).value;
        let vb = &self.node(b).value;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let tracked = self.tracked(&[a, b]);
        self.push(value, op, tracked)
    }

    fn map_with(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.node(a).value.map(f);
        let tracked = self.tracked(&[a]);
        self.push(value, op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `max(x, 0)`; the derivative at exactly zero is taken as zero.
    pub fn relu(&mut self, a: Var) -> Var {
        self.map_with(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map_with(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Elementwise `1 / x`.
    pub fn recip(&mut self, a: Var) -> Var {
        self.map_with(a, Op::Recip(a), |x| 1.0 / x)
    }

    /// Repeats a one-element value over `shape`.
    pub fn broadcast_scalar(&mut self, s: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(s).item()?;
        if shape.contains(&0) {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: "dimension sizes must be positive".into(),
            });
        }
        let tracked = self.tracked(&[s]);
        Ok(self.push(Tensor::full(shape, v), Op::Broadcast(s), tracked))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let tracked = self.tracked(&[a]);
        Ok(self.push(value, Op::Reshape(a), tracked))
    }

    /// Matrix product of `[m, k]` and `[k, n]` values.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(value, Op::Matmul { a, b, m, k, n }, tracked))
    }

    /// Zero-padded "same" temporal convolution.
    ///
    /// `x` is `[C_in, T, ...]` (trailing axes are convolved independently),
    /// `w` is `[C_out, C_in, k]` with `k` odd. The output is `[C_out, T, ...]`.
    pub fn conv_temporal(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var> {
        self.conv_temporal_strided(x, w, dilation, 1)
    }

    /// As [`Tape::conv_temporal`], evaluated only at frames `0, s, 2s, ...`;
    /// the output has `ceil(T / s)` frames.
    pub fn conv_temporal_strided(
        &mut self,
        x: Var,
        w: Var,
        dilation: usize,
        stride: usize,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() < 2 || sw.len() != 3 || sw[1] != sx[0] {
            return Err(Error::ShapeMismatch {
                op: "conv_temporal",
                left: sx,
                right: sw,
            });
        }
        if sw[2].is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "temporal kernel size must be odd, got {}",
                sw[2]
            )));
        }
        if dilation < 1 || stride < 1 {
            return Err(Error::invalid(format!(
                "dilation and stride must be >= 1 (got {dilation}, {stride})"
            )));
        }
        let geom = ConvGeom {
            c_in: sx[0],
            c_out: sw[0],
            t_in: sx[1],
            t_out: sx[1].div_ceil(stride),
            rest: numel(&sx[2..]),
            kernel: sw[2],
            dilation,
            stride,
        };
        let data = kernels::conv_forward(self.value(x).data(), self.value(w).data(), geom);
        let mut shape = sx.clone();
        shape[0] = geom.c_out;
        shape[1] = geom.t_out;
        let value = Tensor::new(shape, data)?;
        let tracked = self.tracked(&[x, w]);
        Ok(self.push(value, Op::Conv { x, w, geom }, tracked))
    }

    /// Removes `axis` by summing, averaging, or taking the maximum.
    pub fn reduce(&mut self, x: Var, axis: usize, kind: ReduceKind) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis { axis, shape });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for o in 0..outer {
                    let dst = &mut out[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        kernels::axpy(dst, 1.0, &src[base..base + inner]);
                    }
                }
                if kind == ReduceKind::Mean {
                    let inv = 1.0 / len as f64;
                    out.iter_mut().for_each(|v| *v *= inv);
                }
            }
            ReduceKind::Max => {
                argmax = vec![0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = src[o * len * inner + i];
                        let mut best_l = 0;
                        for l in 1..len {
                            let v = src[(o * len + l) * inner + i];
                            if v > best {
                                best = v;
                                best_l = l;
                            }
                        }
                        out[o * inner + i] = best;
                        argmax[o * inner + i] = best_l;
                    }
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        let tracked = self.tracked(&[x]);
        Ok(self.push(
            value,
            Op::Reduce {
                x,
                kind,
                outer,
                len,
                inner,
                argmax,
            },
            tracked,
        ))
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let flat = self.reshape(x, &[n])?;
        self.reduce(flat, 0, ReduceKind::Sum)
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis { axis, shape });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(Error::invalid(format!(
                "narrow {start}..{} out of range for axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, len_in, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * len_in + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, out)?;
        let tracked = self.tracked(&[x]);
        Ok(self.push(
            value,
            Op::Narrow {
                x,
                outer,
                len_in,
                inner,
                start,
                len,
            },
            tracked,
        ))
    }

    /// Keeps indices `0, step, 2·step, ...` along `axis`.
    pub fn subsample(&mut self, x: Var, axis: usize, step: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis { axis, shape });
        }
        if step == 0 {
            return Err(Error::invalid("subsample step must be >= 1"));
        }
        let (outer, len_in, inner) = split_axis(&shape, axis);
        let len = len_in.div_ceil(step);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len_in + l * step) * inner;
                out.extend_from_slice(&src[base..base + inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, out)?;
        let tracked = self.tracked(&[x]);
        Ok(self.push(
            value,
            Op::Subsample {
                x,
                outer,
                len_in,
                inner,
                step,
                len,
            },
            tracked,
        ))
    }

    /// `-log softmax(logits)[label]` for a one-dimensional `logits`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.ndim() != 1 {
            return Err(Error::invalid(format!(
                "cross_entropy expects 1-D logits, got {:?}",
                z.shape()
            )));
        }
        if label >= z.numel() {
            return Err(Error::invalid(format!(
                "label {label} out of range for {} classes",
                z.numel()
            )));
        }
        let probs = softmax(z.data());
        let max = z.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.data().iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - z.data()[label];
        let tracked = self.tracked(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            tracked,
        ))
    }

    /// Accumulates `∂loss/∂v` into every tracked value `v` the loss depends
    /// on. Repeated calls add to the existing gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if numel(shape) != 1 {
            return Err(Error::NotScalar(shape.to_vec()));
        }
        let n = loss.0 + 1;
        let mut local: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[loss.0].tracked {
            local[loss.0] = Some(vec![1.0]);
        }
        for i in (0..n).rev() {
            let Some(g) = local[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut local);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => kernels::axpy(acc, 1.0, &g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn slot<'a>(&self, local: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.tracked {
            return None;
        }
        Some(local[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
    }

    fn propagate(&self, i: usize, g: &[f64], local: &mut [Option<Vec<f64>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                if let Some(ga) = self.slot(local, a) {
                    kernels::axpy(ga, 1.0, g);
                }
                if let Some(gb) = self.slot(local, b) {
                    kernels::axpy(gb, 1.0, g);
                }
            }
            &Op::Sub(a, b) => {
                if let Some(ga) = self.slot(local, a) {
                    kernels::axpy(ga, 1.0, g);
                }
                if let Some(gb) = self.slot(local, b) {
                    kernels::axpy(gb, -1.0, g);
                }
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                if let Some(ga) = self.slot(local, a) {
                    for ((d, &gi), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *d += gi * y;
                    }
                }
                if let Some(gb) = self.slot(local, b) {
                    for ((d, &gi), &x) in gb.iter_mut().zip(g).zip(va) {
                        *d += gi * x;
                    }
                }
            }
            &Op::Relu(a) => {
                let va = self.value(a).data();
                if let Some(ga) = self.slot(local, a) {
                    for ((d, &gi), &x) in ga.iter_mut().zip(g).zip(va) {
                        if x > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            &Op::Scale(a, c) => {
                if let Some(ga) = self.slot(local, a) {
                    kernels::axpy(ga, c, g);
                }
            }
            &Op::Recip(a) => {
                let va = self.value(a).data();
                if let Some(ga) = self.slot(local, a) {
                    for ((d, &gi), &x) in ga.iter_mut().zip(g).zip(va) {
                        *d -= gi / (x * x);
                    }
                }
            }
            &Op::Broadcast(s) => {
                if let Some(gs) = self.slot(local, s) {
                    gs[0] += g.iter().sum::<f64>();
                }
            }
            &Op::Reshape(a) => {
                if let Some(ga) = self.slot(local, a) {
                    kernels::axpy(ga, 1.0, g);
                }
            }
            &Op::Matmul { a, b, m, k, n } => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                if let Some(ga) = self.slot(local, a) {
                    kernels::matmul_grad_a(ga, g, vb, m, k, n);
                }
                if let Some(gb) = self.slot(local, b) {
                    kernels::matmul_grad_b(gb, va, g, m, k, n);
                }
            }
            &Op::Conv { x, w, geom } => {
                let (vx, vw) = (self.value(x).data(), self.value(w).data());
                // Take both buffers out so they can be borrowed mutably at once.
                let mut dx = self.slot(local, x).map(std::mem::take);
                let mut dw = self.slot(local, w).map(std::mem::take);
                kernels::conv_backward(
                    vx,
                    vw,
                    g,
                    geom,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    local[x.0] = Some(dx);
                }
                if let Some(dw) = dw {
                    local[w.0] = Some(dw);
                }
            }
            Op::Reduce {
                x,
                kind,
                outer,
                len,
                inner,
                argmax,
            } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                if let Some(gx) = self.slot(local, *x) {
                    match kind {
                        ReduceKind::Sum | ReduceKind::Mean => {
                            let c = if *kind == ReduceKind::Mean {
                                1.0 / len as f64
                            } else {
                                1.0
                            };
                            for o in 0..outer {
                                let go = &g[o * inner..(o + 1) * inner];
                                for l in 0..len {
                                    let base = (o * len + l) * inner;
                                    kernels::axpy(&mut gx[base..base + inner], c, go);
                                }
                            }
                        }
                        ReduceKind::Max => {
                            for o in 0..outer {
                                for i in 0..inner {
                                    let l = argmax[o * inner + i];
                                    gx[(o * len + l) * inner + i] += g[o * inner + i];
                                }
                            }
                        }
                    }
                }
            }
            &Op::Narrow {
                x,
                outer,
                len_in,
                inner,
                start,
                len,
            } => {
                if let Some(gx) = self.slot(local, x) {
                    for o in 0..outer {
                        let dst = (o * len_in + start) * inner;
                        let src = o * len * inner;
                        kernels::axpy(
                            &mut gx[dst..dst + len * inner],
                            1.0,
                            &g[src..src + len * inner],
                        );
                    }
                }
            }
            &Op::Subsample {
                x,
                outer,
                len_in,
                inner,
                step,
                len,
            } => {
                if let Some(gx) = self.slot(local, x) {
                    for o in 0..outer {
                        for l in 0..len {
                            let dst = (o * len_in + l * step) * inner;
                            let src = (o * len + l) * inner;
                            kernels::axpy(&mut gx[dst..dst + inner], 1.0, &g[src..src + inner]);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                if let Some(gz) = self.slot(local, *logits) {
                    for (j, (d, &p)) in gz.iter_mut().zip(probs).enumerate() {
                        let target = if j == *label { 1.0 } else { 0.0 };
                        *d += g[0] * (p - target);
                    }
                }
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec1(t: &mut Tape, v: &[f64]) -> Var {
        t.leaf(Tensor::from_vec(v.to_vec()))
    }

    #[test]
    fn hadamard_and_relu() {
        let mut t = Tape::new();
        let a = vec1(&mut t, &[1.0, 2.0, 3.0]);
        let b = vec1(&mut t, &[4.0, 5.0, 6.0]);
        let p = t.mul(a, b).unwrap();
        assert_eq!(t.value(p).data(), &[4.0, 10.0, 18.0]);
        let x = vec1(&mut t, &[-1.0, 0.0, 2.0]);
        let r = t.relu(x);
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn add_zeros_is_identity() {
        let mut t = Tape::new();
        let x = vec1(&mut t, &[0.1, -3.7, 1e300]);
        let z = t.constant(Tensor::zeros(&[3]));
        let y = t.add(x, z).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[2, 3]));
        let b = t.leaf(Tensor::zeros(&[3, 2]));
        let err = t.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
        assert!(t.matmul(a, a).is_err());
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut t = Tape::new();
        let i2 = t.constant(Tensor::identity(2));
        let m = t.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let p = t.matmul(i2, m).unwrap();
        assert_eq!(t.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
        let a = t.leaf(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let b = t.leaf(Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap());
        let d = t.matmul(a, b).unwrap();
        assert_eq!(t.value(d).data(), &[11.0]);
    }

    #[test]
    fn matmul_sum_gradient_is_ones_times_bt() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap());
        let b = t.leaf(Tensor::new(vec![3, 2], vec![1.0, -2.0, 0.5, 3.0, -1.0, 4.0]).unwrap());
        let p = t.matmul(a, b).unwrap();
        let s = t.sum_all(p).unwrap();
        t.backward(s).unwrap();
        // (ones · bᵀ)[i, p] = Σ_j b[p, j]
        let expect = [-1.0, 3.5, 3.0, -1.0, 3.5, 3.0];
        assert_eq!(t.grad(a).unwrap(), &expect);
    }

    #[test]
    fn conv_examples() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let ident = t.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let y = t.conv_temporal(x, ident, 1).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0, 3.0]);
        let center = t.constant(Tensor::new(vec![1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap());
        let y = t.conv_temporal(x, center, 1).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0, 3.0]);
        let box3 = t.constant(Tensor::new(vec![1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap());
        let y = t.conv_temporal(x, box3, 1).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn conv_rejects_bad_geometry() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[1, 5]));
        let even = t.leaf(Tensor::zeros(&[1, 1, 2]));
        assert!(t.conv_temporal(x, even, 1).is_err());
        let odd = t.leaf(Tensor::zeros(&[1, 1, 3]));
        assert!(t.conv_temporal(x, odd, 0).is_err());
        let wrong_cin = t.leaf(Tensor::zeros(&[1, 2, 3]));
        assert!(t.conv_temporal(x, wrong_cin, 1).is_err());
    }

    #[test]
    fn reduce_examples() {
        let mut t = Tape::new();
        let x = vec1(&mut t, &[2.0, 4.0, 6.0]);
        let m = t.reduce(x, 0, ReduceKind::Mean).unwrap();
        assert_eq!(t.value(m).item().unwrap(), 4.0);

        let x = vec1(&mut t, &[1.0, 3.0, 3.0]);
        let m = t.reduce(x, 0, ReduceKind::Max).unwrap();
        t.backward(m).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.0, 1.0, 0.0]);

        let ones = t.leaf(Tensor::ones(&[3, 5]));
        let s = t.reduce(ones, 1, ReduceKind::Sum).unwrap();
        assert_eq!(t.value(s).data(), &[5.0, 5.0, 5.0]);
        assert!(matches!(
            t.reduce(ones, 2, ReduceKind::Sum),
            Err(Error::InvalidAxis { .. })
        ));
    }

    #[test]
    fn backward_examples() {
        let mut t = Tape::new();
        let x = vec1(&mut t, &[0.3, -2.0, 7.0]);
        let s = t.sum_all(x).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let x = vec1(&mut t, &[1.0, 2.0]);
        let sq = t.mul(x, x).unwrap();
        let s = t.sum_all(sq).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, 4.0]);
        // accumulation without reset
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[4.0, 8.0]);
        t.zero_grads();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = vec1(&mut t, &[1.0, 2.0]);
        assert!(matches!(t.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn unreachable_values_get_no_gradient() {
        let mut t = Tape::new();
        let x = vec1(&mut t, &[1.0]);
        let unused = vec1(&mut t, &[5.0]);
        let y = t.scale(x, 3.0);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[3.0]);
        assert!(t.grad(unused).is_none());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut t = Tape::new();
        let z = t.leaf(Tensor::zeros(&[4]));
        let l = t.cross_entropy(z, 2).unwrap();
        assert!((t.value(l).item().unwrap() - 4f64.ln()).abs() < 1e-12);
        t.backward(l).unwrap();
        assert_eq!(t.grad(z).unwrap(), &[0.25, 0.25, -0.75, 0.25]);
        assert!(t.cross_entropy(z, 4).is_err());
    }

    #[test]
    fn narrow_and_subsample() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![2, 4], (0..8).map(f64::from).collect()).unwrap());
        let n = t.narrow(x, 1, 1, 2).unwrap();
        assert_eq!(t.value(n).data(), &[1.0, 2.0, 5.0, 6.0]);
        let s = t.subsample(x, 1, 2).unwrap();
        assert_eq!(t.value(s).data(), &[0.0, 2.0, 4.0, 6.0]);
        assert!(t.narrow(x, 1, 3, 2).is_err());
    }
}
