//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass in execution order,
//! so node ids are already a topological order. [`Graph::backward`] replays the
//! record in reverse once; a second call on the same record is rejected.

use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        weight: Var,
        geom: ConvGeom,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Relu(Var),
    LeakyRelu(Var, f32),
    Sigmoid(Var),
    Softplus(Var),
    Abs(Var),
    Reduce {
        input: Var,
        axes: Vec<usize>,
        mean: bool,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    GatherRows {
        input: Var,
        index: Vec<usize>,
    },
    LogSoftmax(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The computation record of one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
///
/// Every leaf has an entry; leaves that did not participate in the loss, or
/// were created without `requires_grad`, hold a zero array.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub(crate) fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Inserts an input tensor. Non-finite inputs are rejected.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push("leaf", value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Copies the value of `v` into a new leaf that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// `(m, k) x (k, n) -> (m, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            &mut out,
            0.0,
        );
        let rg = self.rg(&[a, b]);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg)
    }

    /// 2-D convolution on NHWC input `(B, H, W, C_in)` with weight
    /// `(K_h, K_w, C_in, C_out)`, zero padding `pad` on every side.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 4 || sw.len() != 4 || sx[3] != sw[2] {
            return Err(Error::shape("conv2d", sx, sw));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let (in_h, in_w) = (sx[1] + 2 * pad, sx[2] + 2 * pad);
        if in_h < sw[0] || in_w < sw[1] {
            return Err(Error::shape("conv2d", sx, sw));
        }
        let geom = ConvGeom {
            batch: sx[0],
            in_h: sx[1],
            in_w: sx[2],
            in_c: sx[3],
            k_h: sw[0],
            k_w: sw[1],
            out_c: sw[3],
            stride,
            pad,
            out_h: (in_h - sw[0]) / stride + 1,
            out_w: (in_w - sw[1]) / stride + 1,
        };
        let mut out = vec![0.0; geom.rows() * geom.out_c];
        let owned;
        let cols: &[f32] = if geom.is_pointwise() {
            self.value(x).data()
        } else {
            owned = kernels::im2col(self.value(x).data(), &geom);
            &owned
        };
        kernels::gemm(
            geom.rows(),
            geom.patch_len(),
            geom.out_c,
            cols,
            geom.patch_len() as isize,
            1,
            self.value(w).data(),
            geom.out_c as isize,
            1,
            &mut out,
            0.0,
        );
        let rg = self.rg(&[x, w]);
        let shape = vec![geom.batch, geom.out_h, geom.out_w, geom.out_c];
        self.push(
            "conv2d",
            Tensor::from_parts(shape, out),
            Op::Conv2d {
                input: x,
                weight: w,
                geom,
            },
            rg,
        )
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, op: Op) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = kernels::broadcast_shape(&sa, &sb).ok_or_else(|| Error::shape(name, &sa, &sb))?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let out = if sa == sb {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let n: usize = out_shape.iter().product();
            let mut out = vec![0.0; n];
            let st_a = kernels::aligned_strides(&sa, &out_shape);
            let st_b = kernels::aligned_strides(&sb, &out_shape);
            let row = out_shape.last().copied().unwrap_or(1);
            let (la, lb) = (st_a.last().copied().unwrap_or(0), st_b.last().copied().unwrap_or(0));
            kernels::walk_rows(&out_shape, &st_a, &st_b, |o, ba, bb| {
                let dst = &mut out[o..o + row];
                match (la, lb) {
                    (1, 1) => {
                        let (ra, rb) = (&da[ba..ba + row], &db[bb..bb + row]);
                        dst.iter_mut().zip(ra.iter().zip(rb)).for_each(|(d, (&x, &y))| *d = f(x, y));
                    }
                    _ => {
                        for (j, d) in dst.iter_mut().enumerate() {
                            *d = f(da[ba + j * la], db[bb + j * lb]);
                        }
                    }
                }
            });
            out
        };
        let rg = self.rg(&[a, b]);
        self.push(name, Tensor::from_parts(out_shape, out), op, rg)
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f32) -> f32, op: Op) -> Result<Var> {
        let v = self.value(a);
        let out: Vec<f32> = v.data().iter().map(|&x| f(x)).collect();
        let shape = v.shape().to_vec();
        let rg = self.rg(&[a]);
        self.push(name, Tensor::from_parts(shape, out), op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Result<Var> {
        self.unary("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f32) -> Result<Var> {
        self.unary(
            "leaky_relu",
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, kernels::sigmoid, Op::Sigmoid(a))
    }

    /// `log(1 + e^x)` computed as `max(x, 0) + log(1 + e^{-|x|})`.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary("softplus", a, kernels::softplus, Op::Softplus(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary("abs", a, f32::abs, Op::Abs(a))
    }

    fn reduce(&mut self, name: &'static str, a: Var, axes: &[usize], mean: bool) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if axes.iter().any(|&d| d >= shape.len()) {
            return Err(Error::invalid(name, format!("axes {axes:?} out of range for shape {shape:?}")));
        }
        let out_shape: Vec<usize> = (0..shape.len()).filter(|d| !axes.contains(d)).map(|d| shape[d]).collect();
        let st_out = reduced_strides(&shape, &axes);
        let st_in = kernels::contiguous_strides(&shape);
        let n_out: usize = out_shape.iter().product();
        let count: usize = axes.iter().map(|&d| shape[d]).product();
        let mut acc = vec![0f64; n_out];
        let x = self.value(a).data();
        let row = shape.last().copied().unwrap_or(1);
        let lo = st_out.last().copied().unwrap_or(0);
        kernels::walk_rows(&shape, &st_in, &st_out, |o, _, bo| {
            for j in 0..row {
                acc[bo + j * lo] += x[o + j] as f64;
            }
        });
        let norm = if mean { 1.0 / count as f64 } else { 1.0 };
        let out = acc.into_iter().map(|v| (v * norm) as f32).collect();
        let rg = self.rg(&[a]);
        self.push(
            name,
            Tensor::from_parts(out_shape, out),
            Op::Reduce { input: a, axes, mean },
            rg,
        )
    }

    /// Mean over the given axes (removed from the output shape).
    pub fn mean(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.reduce("mean", a, axes, true)
    }

    pub fn sum(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.reduce("sum", a, axes, false)
    }

    /// Mean of every element, as a rank-0 tensor.
    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        self.mean(a, &axes)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(inputs);
        self.push(
            "concat",
            Tensor::from_parts(shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        self.push("reshape", value, Op::Reshape(a), rg)
    }

    /// `(B, ...) -> (B, prod(...))`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.is_empty() {
            return Err(Error::invalid("flatten", "cannot flatten a scalar"));
        }
        let rest: usize = s[1..].iter().product();
        let b = s[0];
        self.reshape(a, &[b, rest])
    }

    /// Selects rows of the leading axis: `out[i] = a[index[i]]`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.is_empty() || index.is_empty() {
            return Err(Error::invalid("gather_rows", "needs a non-scalar input and a non-empty index"));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= s[0]) {
            return Err(Error::invalid("gather_rows", format!("row {bad} out of range for shape {s:?}")));
        }
        let w: usize = s[1..].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(index.len() * w);
        for &i in index {
            out.extend_from_slice(&src[i * w..(i + 1) * w]);
        }
        let mut shape = s;
        shape[0] = index.len();
        let rg = self.rg(&[a]);
        self.push(
            "gather_rows",
            Tensor::from_parts(shape, out),
            Op::GatherRows {
                input: a,
                index: index.to_vec(),
            },
            rg,
        )
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let w = *s.last().ok_or_else(|| Error::invalid("log_softmax", "scalar input"))?;
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        for (src, dst) in x.chunks(w).zip(out.chunks_mut(w)) {
            let m = src.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = src.iter().map(|&v| ((v - m) as f64).exp()).sum::<f64>().ln() as f32 + m;
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v - lse;
            }
        }
        let rg = self.rg(&[a]);
        self.push("log_softmax", Tensor::from_parts(s, out), Op::LogSoftmax(a), rg)
    }

    /// Reverse pass from a scalar `loss`. Consumes the record.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::StaleRecord);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        let accumulate = |grads: &mut Vec<Option<Vec<f32>>>, v: Var, g: Vec<f32>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, x)| *e += x),
                slot => *slot = Some(g),
            }
        };

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let out_shape = node.value.shape();
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                    if nodes[a.0].requires_grad {
                        let mut da = vec![0.0; m * k];
                        kernels::gemm(m, n, k, &g, n as isize, 1, vb.data(), 1, n as isize, &mut da, 0.0);
                        accumulate(&mut grads, *a, da);
                    }
                    if nodes[b.0].requires_grad {
                        let mut db = vec![0.0; k * n];
                        kernels::gemm(k, m, n, va.data(), 1, k as isize, &g, n as isize, 1, &mut db, 0.0);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Conv2d { input, weight, geom } => {
                    let x = nodes[input.0].value.data();
                    let w = nodes[weight.0].value.data();
                    let (rows, plen, co) = (geom.rows(), geom.patch_len(), geom.out_c);
                    if nodes[weight.0].requires_grad {
                        let owned;
                        let cols: &[f32] = if geom.is_pointwise() {
                            x
                        } else {
                            owned = kernels::im2col(x, geom);
                            &owned
                        };
                        let mut dw = vec![0.0; plen * co];
                        kernels::gemm(plen, rows, co, cols, 1, plen as isize, &g, co as isize, 1, &mut dw, 0.0);
                        accumulate(&mut grads, *weight, dw);
                    }
                    if nodes[input.0].requires_grad {
                        let mut dcols = vec![0.0; rows * plen];
                        kernels::gemm(rows, co, plen, &g, co as isize, 1, w, 1, co as isize, &mut dcols, 0.0);
                        let dx = if geom.is_pointwise() {
                            dcols
                        } else {
                            let mut dx = vec![0.0; x.len()];
                            kernels::col2im(&dcols, geom, &mut dx);
                            dx
                        };
                        accumulate(&mut grads, *input, dx);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if nodes[a.0].requires_grad {
                        let da = kernels::reduce_to_shape(&g, out_shape, nodes[a.0].value.shape());
                        accumulate(&mut grads, *a, da);
                    }
                    if nodes[b.0].requires_grad {
                        let mut db = kernels::reduce_to_shape(&g, out_shape, nodes[b.0].value.shape());
                        if sign < 0.0 {
                            db.iter_mut().for_each(|v| *v = -*v);
                        }
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Mul(a, b) => {
                    for (this, other) in [(*a, *b), (*b, *a)] {
                        if !nodes[this.0].requires_grad {
                            continue;
                        }
                        let prod = broadcast_product(&g, out_shape, &nodes[other.0].value);
                        let d = kernels::reduce_to_shape(&prod, out_shape, nodes[this.0].value.shape());
                        accumulate(&mut grads, this, d);
                    }
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.iter().map(|v| v * c).collect());
                }
                Op::Relu(a) => {
                    let x = nodes[a.0].value.data();
                    let d = g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::LeakyRelu(a, slope) => {
                    let x = nodes[a.0].value.data();
                    let d = g
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { slope * g })
                        .collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let d = g.iter().zip(y).map(|(g, &y)| g * y * (1.0 - y)).collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Softplus(a) => {
                    let x = nodes[a.0].value.data();
                    let d = g.iter().zip(x).map(|(g, &x)| g * kernels::sigmoid(x)).collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Abs(a) => {
                    let x = nodes[a.0].value.data();
                    let d = g
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else if x < 0.0 { -g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Reduce { input, axes, mean } => {
                    let in_shape = nodes[input.0].value.shape();
                    let count: usize = axes.iter().map(|&d| in_shape[d]).product();
                    let norm = if *mean { 1.0 / count as f32 } else { 1.0 };
                    let st_out = reduced_strides(in_shape, axes);
                    let st_in = kernels::contiguous_strides(in_shape);
                    let mut dx = vec![0.0; nodes[input.0].value.numel()];
                    let row = in_shape.last().copied().unwrap_or(1);
                    let lo = st_out.last().copied().unwrap_or(0);
                    kernels::walk_rows(in_shape, &st_in, &st_out, |o, _, bo| {
                        for j in 0..row {
                            dx[o + j] = g[bo + j * lo] * norm;
                        }
                    });
                    accumulate(&mut grads, *input, dx);
                }
                Op::Concat { inputs, axis } => {
                    let outer: usize = out_shape[..*axis].iter().product();
                    let inner: usize = out_shape[axis + 1..].iter().product();
                    let mut parts: Vec<Vec<f32>> = inputs
                        .iter()
                        .map(|v| Vec::with_capacity(nodes[v.0].value.numel()))
                        .collect();
                    let mut offset = 0;
                    for _ in 0..outer {
                        for (p, v) in parts.iter_mut().zip(inputs) {
                            let chunk = nodes[v.0].value.shape()[*axis] * inner;
                            p.extend_from_slice(&g[offset..offset + chunk]);
                            offset += chunk;
                        }
                    }
                    for (p, v) in parts.into_iter().zip(inputs) {
                        accumulate(&mut grads, *v, p);
                    }
                }
                Op::Reshape(a) => accumulate(&mut grads, *a, g),
                Op::GatherRows { input, index } => {
                    let src = &nodes[input.0].value;
                    let w = src.numel() / src.shape()[0];
                    let mut dx = vec![0.0; src.numel()];
                    for (r, &i) in index.iter().enumerate() {
                        for (d, s) in dx[i * w..(i + 1) * w].iter_mut().zip(&g[r * w..(r + 1) * w]) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::LogSoftmax(a) => {
                    let y = node.value.data();
                    let w = *out_shape.last().unwrap();
                    let mut dx = vec![0.0; y.len()];
                    for ((gy, yy), d) in g.chunks(w).zip(y.chunks(w)).zip(dx.chunks_mut(w)) {
                        let total: f64 = gy.iter().map(|&v| v as f64).sum();
                        for ((d, &gv), &yv) in d.iter_mut().zip(gy).zip(yy) {
                            *d = gv - yv.exp() * total as f32;
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
            }
        }

        let grads = nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, g) {
                (Op::Leaf, Some(g)) => Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
                (Op::Leaf, None) => Some(Tensor::zeros(node.value.shape())),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Strides of the reduced output expressed over the input index space.
fn reduced_strides(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let kept: Vec<usize> = (0..shape.len()).filter(|d| !axes.contains(d)).collect();
    let out_shape: Vec<usize> = kept.iter().map(|&d| shape[d]).collect();
    let out_strides = kernels::contiguous_strides(&out_shape);
    let mut st = vec![0; shape.len()];
    for (pos, &d) in kept.iter().enumerate() {
        st[d] = out_strides[pos];
    }
    st
}

/// `g * other` where `other` broadcasts to `out_shape`.
fn broadcast_product(g: &[f32], out_shape: &[usize], other: &Tensor) -> Vec<f32> {
    if other.shape() == out_shape {
        return g.iter().zip(other.data()).map(|(a, b)| a * b).collect();
    }
    let st = kernels::aligned_strides(other.shape(), out_shape);
    let zeros = vec![0; out_shape.len()];
    let row = out_shape.last().copied().unwrap_or(1);
    let lo = st.last().copied().unwrap_or(0);
    let d = other.data();
    let mut out = vec![0.0; g.len()];
    kernels::walk_rows(out_shape, &st, &zeros, |o, b, _| {
        for j in 0..row {
            out[o + j] = g[o + j] * d[b + j * lo];
        }
    });
    out
}
