//! Reverse-mode differentiation over a per-forward-pass tape.
//!
//! A [`Tape`] records every differentiable operation executed during a
//! forward pass. Calling [`Tape::backward`] on a scalar output replays the
//! record in reverse and accumulates gradients into every trainable leaf.
//! Tapes are single-use: a second backward call is an error, and a fresh
//! tape is expected per training step.

use std::cell::RefCell;

use crate::error::{Result, UgnError};
use crate::tensor::{Precision, Tensor};

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sum(usize),
    /// out[i][j] = a[i] * b[j]
    Outer(usize, usize),
    Row(usize, usize),
    Concat(usize, usize),
    Reshape(usize),
    StackRows(Vec<usize>),
    /// x[n x c] + bias[c], broadcast over rows.
    AddRowBias(usize, usize),
    Conv2d {
        input: usize,
        kernels: usize,
        bias: Option<usize>,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        input: usize,
        argmax: Vec<usize>,
    },
    SoftmaxRows(usize),
    SoftmaxCrossEntropy {
        logits: usize,
        targets: Tensor,
        mask: Vec<bool>,
    },
    EdgeSmoothness {
        outputs: usize,
        edges: Vec<(usize, usize)>,
    },
    MseLoss {
        pred: usize,
        target: Tensor,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    trainable: bool,
    op: Op,
}

struct TapeInner {
    nodes: Vec<Node>,
    backward_done: bool,
    ops_visited: usize,
}

/// Operation record for one forward pass.
pub struct Tape {
    inner: RefCell<TapeInner>,
    precision: Precision,
}

/// Handle to a tensor recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::with_precision(Precision::F64)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Tape {
            inner: RefCell::new(TapeInner {
                nodes: Vec::new(),
                backward_done: false,
                ops_visited: 0,
            }),
            precision,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of non-leaf ops replayed by the last backward call.
    pub fn ops_visited(&self) -> usize {
        self.inner.borrow().ops_visited
    }

    /// Number of non-leaf ops recorded on the tape.
    pub fn ops_recorded(&self) -> usize {
        self.inner
            .borrow()
            .nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .count()
    }

    /// Record a constant input. Gradients flow through it but are not kept.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Record a trainable input; its gradient is retained by backward.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    fn push(&self, mut value: Tensor, op: Op, trainable: bool) -> Var<'_> {
        value.quantize(self.precision);
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            grad: None,
            trainable,
            op,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    /// Clone of the value held at `var`.
    pub fn value(&self, var: Var<'_>) -> Tensor {
        self.inner.borrow().nodes[var.id].value.clone()
    }

    /// Gradient of the last backward pass with respect to `var`, if retained.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        self.inner.borrow().nodes[var.id].grad.clone()
    }

    /// Stack equal-length vectors as the rows of a 2-D tensor.
    pub fn stack_rows<'t>(&'t self, rows: &[Var<'t>]) -> Result<Var<'t>> {
        if rows.is_empty() {
            return Err(UgnError::Dimension("stack_rows on empty list".into()));
        }
        let (value, ids) = {
            let inner = self.inner.borrow();
            let c = inner.nodes[rows[0].id].value.numel();
            let mut data = Vec::with_capacity(rows.len() * c);
            let mut ids = Vec::with_capacity(rows.len());
            for r in rows {
                let v = &inner.nodes[r.id].value;
                if v.numel() != c {
                    return Err(UgnError::shape(
                        "stack_rows",
                        &[c],
                        &[v.numel()],
                    ));
                }
                data.extend_from_slice(v.data());
                ids.push(r.id);
            }
            (Tensor::new(vec![rows.len(), c], data)?, ids)
        };
        Ok(self.push(value, Op::StackRows(ids), false))
    }

    /// Propagate gradients from a scalar output back to every leaf.
    pub fn backward(&self, output: Var<'_>) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if inner.backward_done {
            return Err(UgnError::Autograd(
                "backward called twice on the same tape".into(),
            ));
        }
        if !inner.nodes[output.id].value.is_scalar() {
            return Err(UgnError::Autograd(format!(
                "backward requires a scalar output, got shape {:?}",
                inner.nodes[output.id].value.shape()
            )));
        }
        inner.backward_done = true;
        inner.nodes[output.id].grad = Some(Tensor::scalar(1.0));
        let mut visited = 0usize;

        for id in (0..=output.id).rev() {
            let grad = match inner.nodes[id].grad.take() {
                Some(g) => g,
                None => continue,
            };
            // Split borrow: the op is read-only while input grads accumulate.
            let nodes = &mut inner.nodes;
            match &nodes[id].op {
                Op::Leaf => {
                    if nodes[id].trainable {
                        nodes[id].grad = Some(grad);
                    }
                    continue;
                }
                _ => visited += 1,
            }
            backprop(nodes, id, &grad)?;
        }
        inner.ops_visited = visited;
        Ok(())
    }
}

fn accumulate(nodes: &mut [Node], id: usize, delta: Tensor) {
    match &mut nodes[id].grad {
        Some(g) => {
            let sum = g.add(&delta).expect("gradient shapes match by construction");
            *g = sum;
        }
        None => nodes[id].grad = Some(delta),
    }
}

/// Apply one op's vector-Jacobian product, accumulating into input grads.
fn backprop(nodes: &mut [Node], id: usize, grad: &Tensor) -> Result<()> {
    // Values are read before mutation; ops only reference earlier ids.
    match &nodes[id].op {
        Op::Leaf => unreachable!("leaves handled by caller"),
        &Op::MatMul(a, b) => {
            let av = nodes[a].value.clone();
            let bv = nodes[b].value.clone();
            let da = grad.matmul(&bv.transpose2()?)?;
            let db = av.transpose2()?.matmul(grad)?;
            accumulate(nodes, a, da);
            accumulate(nodes, b, db);
        }
        &Op::Add(a, b) => {
            accumulate(nodes, a, grad.clone());
            accumulate(nodes, b, grad.clone());
        }
        &Op::Sub(a, b) => {
            accumulate(nodes, a, grad.clone());
            accumulate(nodes, b, grad.scale(-1.0));
        }
        &Op::Mul(a, b) => {
            let da = grad.zip(&nodes[b].value, |g, b| g * b)?;
            let db = grad.zip(&nodes[a].value, |g, a| g * a)?;
            accumulate(nodes, a, da);
            accumulate(nodes, b, db);
        }
        &Op::Scale(a, c) => {
            accumulate(nodes, a, grad.scale(c));
        }
        &Op::Relu(a) => {
            let da = grad.zip(&nodes[a].value, |g, x| if x > 0.0 { g } else { 0.0 })?;
            accumulate(nodes, a, da);
        }
        &Op::Sum(a) => {
            let g = grad.scalar_value()?;
            let da = Tensor::full(nodes[a].value.shape().to_vec(), g);
            accumulate(nodes, a, da);
        }
        &Op::Outer(a, b) => {
            let av = &nodes[a].value;
            let bv = &nodes[b].value;
            let (m, n) = (av.numel(), bv.numel());
            let mut da = vec![0.0; m];
            let mut db = vec![0.0; n];
            for i in 0..m {
                for j in 0..n {
                    let g = grad.data()[i * n + j];
                    da[i] += g * bv.data()[j];
                    db[j] += g * av.data()[i];
                }
            }
            let da = Tensor::new(av.shape().to_vec(), da)?;
            let db = Tensor::new(bv.shape().to_vec(), db)?;
            accumulate(nodes, a, da);
            accumulate(nodes, b, db);
        }
        &Op::Row(src, row) => {
            let shape = nodes[src].value.shape().to_vec();
            let c = shape[1];
            let mut da = Tensor::zeros(shape);
            da.data_mut()[row * c..(row + 1) * c].copy_from_slice(grad.data());
            accumulate(nodes, src, da);
        }
        &Op::Concat(a, b) => {
            let na = nodes[a].value.numel();
            let da = Tensor::new(
                nodes[a].value.shape().to_vec(),
                grad.data()[..na].to_vec(),
            )?;
            let db = Tensor::new(
                nodes[b].value.shape().to_vec(),
                grad.data()[na..].to_vec(),
            )?;
            accumulate(nodes, a, da);
            accumulate(nodes, b, db);
        }
        &Op::Reshape(a) => {
            let da = Tensor::new(nodes[a].value.shape().to_vec(), grad.data().to_vec())?;
            accumulate(nodes, a, da);
        }
        Op::StackRows(ids) => {
            let ids = ids.clone();
            let c = nodes[ids[0]].value.numel();
            for (i, src) in ids.iter().enumerate() {
                let da = Tensor::new(
                    nodes[*src].value.shape().to_vec(),
                    grad.data()[i * c..(i + 1) * c].to_vec(),
                )?;
                accumulate(nodes, *src, da);
            }
        }
        &Op::AddRowBias(x, b) => {
            let (n, c) = (grad.shape()[0], grad.shape()[1]);
            let mut db = vec![0.0; c];
            for i in 0..n {
                for j in 0..c {
                    db[j] += grad.data()[i * c + j];
                }
            }
            accumulate(nodes, x, grad.clone());
            accumulate(nodes, b, Tensor::new(nodes[b].value.shape().to_vec(), db)?);
        }
        &Op::Conv2d {
            input,
            kernels,
            bias,
            stride,
            padding,
        } => {
            let inv = nodes[input].value.clone();
            let kv = nodes[kernels].value.clone();
            let (din, dk, dbias) = conv2d_backward(&inv, &kv, grad, stride, padding);
            accumulate(nodes, input, din);
            accumulate(nodes, kernels, dk);
            if let Some(b) = bias {
                accumulate(nodes, b, dbias);
            }
        }
        Op::MaxPool2d { input, argmax } => {
            let input = *input;
            let argmax = argmax.clone();
            let mut da = Tensor::zeros(nodes[input].value.shape().to_vec());
            for (out_idx, &src_idx) in argmax.iter().enumerate() {
                da.data_mut()[src_idx] += grad.data()[out_idx];
            }
            accumulate(nodes, input, da);
        }
        &Op::SoftmaxRows(a) => {
            // dx_i = y_i * (dy_i - sum_j dy_j * y_j), per row
            let y = nodes[id].value.clone();
            let (n, c) = (y.shape()[0], y.shape()[1]);
            let mut da = Tensor::zeros(vec![n, c]);
            for i in 0..n {
                let dot: f64 = (0..c)
                    .map(|j| grad.data()[i * c + j] * y.data()[i * c + j])
                    .sum();
                for j in 0..c {
                    da.data_mut()[i * c + j] =
                        y.data()[i * c + j] * (grad.data()[i * c + j] - dot);
                }
            }
            accumulate(nodes, a, da);
        }
        Op::SoftmaxCrossEntropy {
            logits,
            targets,
            mask,
        } => {
            let logits = *logits;
            let targets = targets.clone();
            let mask = mask.clone();
            let g = grad.scalar_value()?;
            let lv = &nodes[logits].value;
            let (n, c) = (lv.shape()[0], lv.shape()[1]);
            let mut da = Tensor::zeros(vec![n, c]);
            for i in 0..n {
                if !mask[i] {
                    continue;
                }
                let p = stable_softmax(lv.row(i));
                for j in 0..c {
                    da.data_mut()[i * c + j] = g * (p[j] - targets.get2(i, j));
                }
            }
            accumulate(nodes, logits, da);
        }
        Op::EdgeSmoothness { outputs, edges } => {
            let outputs = *outputs;
            let edges = edges.clone();
            let g = grad.scalar_value()?;
            let ov = nodes[outputs].value.clone();
            let c = ov.shape()[1];
            let mut da = Tensor::zeros(ov.shape().to_vec());
            for &(u, v) in &edges {
                for j in 0..c {
                    let d = ov.get2(u, j) - ov.get2(v, j);
                    let delta = g * 2.0 / c as f64 * d;
                    da.data_mut()[u * c + j] += delta;
                    da.data_mut()[v * c + j] -= delta;
                }
            }
            accumulate(nodes, outputs, da);
        }
        Op::MseLoss { pred, target } => {
            let pred = *pred;
            let target = target.clone();
            let g = grad.scalar_value()?;
            let pv = &nodes[pred].value;
            let scale = 2.0 / pv.numel() as f64;
            let da = pv.zip(&target, |p, t| g * scale * (p - t))?;
            accumulate(nodes, pred, da);
        }
    }
    Ok(())
}

fn stable_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / z).collect()
}

/// Output spatial extent of a convolution/pool along one axis.
fn out_extent(extent: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (extent + 2 * padding - kernel) / stride + 1
}

fn conv2d_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let ish = input.shape();
    let ksh = kernels.shape();
    if ish.len() != 3 || ksh.len() != 4 {
        return Err(UgnError::shape("conv2d", ish, ksh));
    }
    let (cin, h, w) = (ish[0], ish[1], ish[2]);
    let (cout, kcin, kh, kw) = (ksh[0], ksh[1], ksh[2], ksh[3]);
    if kcin != cin {
        return Err(UgnError::shape("conv2d channels", ish, ksh));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(UgnError::Dimension(format!(
            "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    if let Some(b) = bias {
        if b.numel() != cout {
            return Err(UgnError::shape("conv2d bias", &[cout], b.shape()));
        }
    }
    let (oh, ow) = (
        out_extent(h, kh, stride, padding),
        out_extent(w, kw, stride, padding),
    );
    let mut out = Tensor::zeros(vec![cout, oh, ow]);
    let idata = input.data();
    let kdata = kernels.data();
    for o in 0..cout {
        let b = bias.map_or(0.0, |b| b.data()[o]);
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = b;
                for ci in 0..cin {
                    for ky in 0..kh {
                        let iy = (y * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (x * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += idata[(ci * h + iy as usize) * w + ix as usize]
                                * kdata[((o * cin + ci) * kh + ky) * kw + kx];
                        }
                    }
                }
                out.data_mut()[(o * oh + y) * ow + x] = acc;
            }
        }
    }
    Ok(out)
}

fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad: &Tensor,
    stride: usize,
    padding: usize,
) -> (Tensor, Tensor, Tensor) {
    let ish = input.shape();
    let ksh = kernels.shape();
    let (cin, h, w) = (ish[0], ish[1], ish[2]);
    let (cout, _, kh, kw) = (ksh[0], ksh[1], ksh[2], ksh[3]);
    let (oh, ow) = (grad.shape()[1], grad.shape()[2]);
    let mut din = Tensor::zeros(ish.to_vec());
    let mut dk = Tensor::zeros(ksh.to_vec());
    let mut db = Tensor::zeros(vec![cout]);
    let idata = input.data();
    let kdata = kernels.data();
    for o in 0..cout {
        for y in 0..oh {
            for x in 0..ow {
                let g = grad.data()[(o * oh + y) * ow + x];
                if g == 0.0 {
                    continue;
                }
                db.data_mut()[o] += g;
                for ci in 0..cin {
                    for ky in 0..kh {
                        let iy = (y * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (x * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let iidx = (ci * h + iy as usize) * w + ix as usize;
                            let kidx = ((o * cin + ci) * kh + ky) * kw + kx;
                            din.data_mut()[iidx] += g * kdata[kidx];
                            dk.data_mut()[kidx] += g * idata[iidx];
                        }
                    }
                }
            }
        }
    }
    (din, dk, db)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(*self)
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    fn same_tape(&self, other: &Var<'t>) -> bool {
        std::ptr::eq(self.tape, other.tape)
    }

    fn binary(
        &self,
        other: Var<'t>,
        context: &str,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var<'t>> {
        assert!(self.same_tape(&other), "{context}: vars from different tapes");
        let value = {
            let inner = self.tape.inner.borrow();
            f(&inner.nodes[self.id].value, &inner.nodes[other.id].value)?
        };
        Ok(self.tape.push(value, op(self.id, other.id), false))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "matmul", |a, b| a.matmul(b), Op::MatMul)
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| a.add(b), Op::Add)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a.sub(b), Op::Sub)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |a, b| a.zip(b, |x, y| x * y), Op::Mul)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let value = self.value().scale(c);
        self.tape.push(value, Op::Scale(self.id, c), false)
    }

    pub fn relu(&self) -> Var<'t> {
        let value = self.value().map(|x| x.max(0.0));
        self.tape.push(value, Op::Relu(self.id), false)
    }

    pub fn sum(&self) -> Var<'t> {
        let value = Tensor::scalar(self.value().sum());
        self.tape.push(value, Op::Sum(self.id), false)
    }

    /// Outer product: out[i][j] = self[i] * other[j].
    pub fn outer(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            "outer",
            |a, b| {
                let (m, n) = (a.numel(), b.numel());
                let mut data = Vec::with_capacity(m * n);
                for i in 0..m {
                    for j in 0..n {
                        data.push(a.data()[i] * b.data()[j]);
                    }
                }
                Tensor::new(vec![m, n], data)
            },
            Op::Outer,
        )
    }

    /// Row `i` of a 2-D tensor, as a vector.
    pub fn row(&self, i: usize) -> Result<Var<'t>> {
        let value = {
            let inner = self.tape.inner.borrow();
            let v = &inner.nodes[self.id].value;
            if v.shape().len() != 2 || i >= v.shape()[0] {
                return Err(UgnError::Dimension(format!(
                    "row {i} out of bounds for shape {:?}",
                    v.shape()
                )));
            }
            Tensor::vector(v.row(i).to_vec())
        };
        Ok(self.tape.push(value, Op::Row(self.id, i), false))
    }

    /// Concatenation of two vectors.
    pub fn concat(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            "concat",
            |a, b| {
                let mut data = a.data().to_vec();
                data.extend_from_slice(b.data());
                Tensor::new(vec![a.numel() + b.numel()], data)
            },
            Op::Concat,
        )
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'t>> {
        let value = self.value().reshape(shape)?;
        Ok(self.tape.push(value, Op::Reshape(self.id), false))
    }

    /// Broadcast-add a bias vector to every row of a 2-D tensor.
    pub fn add_row_bias(&self, bias: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            bias,
            "add_row_bias",
            |x, b| {
                if x.shape().len() != 2 || x.shape()[1] != b.numel() {
                    return Err(UgnError::shape("add_row_bias", x.shape(), b.shape()));
                }
                let (n, c) = (x.shape()[0], x.shape()[1]);
                let mut out = x.clone();
                for i in 0..n {
                    for j in 0..c {
                        out.data_mut()[i * c + j] += b.data()[j];
                    }
                }
                Ok(out)
            },
            Op::AddRowBias,
        )
    }

    /// 2-D cross-correlation over a `[c_in, h, w]` input.
    pub fn conv2d(
        &self,
        kernels: Var<'t>,
        bias: Option<Var<'t>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t>> {
        assert!(self.same_tape(&kernels), "conv2d: vars from different tapes");
        if stride == 0 {
            return Err(UgnError::InvalidArgument("conv2d stride must be > 0".into()));
        }
        let value = {
            let inner = self.tape.inner.borrow();
            let b = bias.map(|b| inner.nodes[b.id].value.clone());
            conv2d_forward(
                &inner.nodes[self.id].value,
                &inner.nodes[kernels.id].value,
                b.as_ref(),
                stride,
                padding,
            )?
        };
        Ok(self.tape.push(
            value,
            Op::Conv2d {
                input: self.id,
                kernels: kernels.id,
                bias: bias.map(|b| b.id),
                stride,
                padding,
            },
            false,
        ))
    }

    /// Per-window maximum over a `[c, h, w]` input. Ties resolve to the
    /// first cell in row-major order so backward is deterministic.
    pub fn maxpool2d(&self, window: usize, stride: usize) -> Result<Var<'t>> {
        if window == 0 || stride == 0 {
            return Err(UgnError::InvalidArgument(
                "maxpool2d window and stride must be > 0".into(),
            ));
        }
        let (value, argmax) = {
            let inner = self.tape.inner.borrow();
            let v = &inner.nodes[self.id].value;
            let sh = v.shape();
            if sh.len() != 3 {
                return Err(UgnError::Dimension(format!(
                    "maxpool2d expects [c,h,w], got {sh:?}"
                )));
            }
            let (c, h, w) = (sh[0], sh[1], sh[2]);
            if window > h || window > w {
                return Err(UgnError::Dimension(format!(
                    "maxpool2d window {window} exceeds input extent {h}x{w}"
                )));
            }
            let (oh, ow) = (
                out_extent(h, window, stride, 0),
                out_extent(w, window, stride, 0),
            );
            let mut out = Tensor::zeros(vec![c, oh, ow]);
            let mut argmax = vec![0usize; c * oh * ow];
            for ch in 0..c {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for ky in 0..window {
                            for kx in 0..window {
                                let idx =
                                    (ch * h + y * stride + ky) * w + x * stride + kx;
                                if v.data()[idx] > best {
                                    best = v.data()[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let oidx = (ch * oh + y) * ow + x;
                        out.data_mut()[oidx] = best;
                        argmax[oidx] = best_idx;
                    }
                }
            }
            (out, argmax)
        };
        Ok(self.tape.push(
            value,
            Op::MaxPool2d {
                input: self.id,
                argmax,
            },
            false,
        ))
    }

    /// Row-wise softmax of a 2-D tensor.
    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        let value = {
            let inner = self.tape.inner.borrow();
            let v = &inner.nodes[self.id].value;
            if v.shape().len() != 2 {
                return Err(UgnError::Dimension(format!(
                    "softmax_rows expects 2-D, got {:?}",
                    v.shape()
                )));
            }
            let (n, c) = (v.shape()[0], v.shape()[1]);
            let mut out = Tensor::zeros(vec![n, c]);
            for i in 0..n {
                let p = stable_softmax(v.row(i));
                out.data_mut()[i * c..(i + 1) * c].copy_from_slice(&p);
            }
            out
        };
        Ok(self.tape.push(value, Op::SoftmaxRows(self.id), false))
    }

    /// Masked categorical cross-entropy against one-hot targets,
    /// stabilized by per-row max subtraction.
    pub fn softmax_cross_entropy(&self, targets: &Tensor, mask: &[bool]) -> Result<Var<'t>> {
        let value = {
            let inner = self.tape.inner.borrow();
            let logits = &inner.nodes[self.id].value;
            if logits.shape().len() != 2 || logits.shape() != targets.shape() {
                return Err(UgnError::shape(
                    "softmax_cross_entropy",
                    logits.shape(),
                    targets.shape(),
                ));
            }
            let (n, c) = (logits.shape()[0], logits.shape()[1]);
            if mask.len() != n {
                return Err(UgnError::shape("cross_entropy mask", &[n], &[mask.len()]));
            }
            if !mask.iter().any(|&m| m) {
                return Err(UgnError::Autograd("no supervised rows".into()));
            }
            let mut loss = 0.0;
            for i in 0..n {
                if !mask[i] {
                    continue;
                }
                let trow = targets.row(i);
                let ones = trow.iter().filter(|&&t| t == 1.0).count();
                let zeros = trow.iter().filter(|&&t| t == 0.0).count();
                if ones != 1 || ones + zeros != c {
                    return Err(UgnError::InvalidArgument(format!(
                        "target row {i} is not one-hot"
                    )));
                }
                let row = logits.row(i);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let logz = row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln() + m;
                for j in 0..c {
                    if trow[j] == 1.0 {
                        loss -= row[j] - logz;
                    }
                }
            }
            Tensor::scalar(loss)
        };
        Ok(self.tape.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits: self.id,
                targets: targets.clone(),
                mask: mask.to_vec(),
            },
            false,
        ))
    }

    /// Sum over edges of the per-class mean squared output difference.
    pub fn edge_smoothness(&self, edges: &[(usize, usize)]) -> Result<Var<'t>> {
        let value = {
            let inner = self.tape.inner.borrow();
            let o = &inner.nodes[self.id].value;
            if o.shape().len() != 2 {
                return Err(UgnError::Dimension(format!(
                    "edge_smoothness expects 2-D outputs, got {:?}",
                    o.shape()
                )));
            }
            let (n, c) = (o.shape()[0], o.shape()[1]);
            let mut loss = 0.0;
            for &(u, v) in edges {
                if u >= n || v >= n {
                    return Err(UgnError::Graph(format!(
                        "edge ({u},{v}) out of range for {n} rows"
                    )));
                }
                for j in 0..c {
                    let d = o.get2(u, j) - o.get2(v, j);
                    loss += d * d / c as f64;
                }
            }
            Tensor::scalar(loss)
        };
        Ok(self.tape.push(
            value,
            Op::EdgeSmoothness {
                outputs: self.id,
                edges: edges.to_vec(),
            },
            false,
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&self, target: &Tensor) -> Result<Var<'t>> {
        let value = {
            let inner = self.tape.inner.borrow();
            let p = &inner.nodes[self.id].value;
            if p.shape() != target.shape() {
                return Err(UgnError::shape("mse", p.shape(), target.shape()));
            }
            let sq: f64 = p
                .data()
                .iter()
                .zip(target.data())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            Tensor::scalar(sq / p.numel() as f64)
        };
        Ok(self.tape.push(
            value,
            Op::MseLoss {
                pred: self.id,
                target: target.clone(),
            },
            false,
        ))
    }
}

/// Central-difference gradient of a scalar function: the oracle against
/// which every analytic gradient is checked.
pub fn finite_diff_grad(
    mut f: impl FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    if h <= 0.0 {
        return Err(UgnError::InvalidArgument("step h must be positive".into()));
    }
    let mut grad = Tensor::zeros(x.shape().to_vec());
    for i in 0..x.numel() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        grad.data_mut()[i] = (f(&xp)? - f(&xm)?) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward_and_grad() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, -1.0]));
        let y = x.relu().sum();
        tape.backward(y).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn relu_all_negative_zero_output_and_grad() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![-3.0, -0.5]));
        let y = x.relu();
        assert_eq!(y.value().data(), &[0.0, 0.0]);
        tape.backward(y.sum()).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn matmul_grad_identity_case() {
        // y = sum(A x B) with A = I: grad_B is all ones.
        let tape = Tape::new();
        let a = tape.leaf(Tensor::identity(2));
        let b = tape.param(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let y = a.matmul(b).unwrap().sum();
        tape.backward(y).unwrap();
        assert_eq!(b.grad().unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn backward_rejects_second_call() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let y = x.sum();
        tape.backward(y).unwrap();
        let err = tape.backward(y).unwrap_err();
        assert!(err.to_string().contains("twice"));
    }

    #[test]
    fn conv2d_scalar_kernel_scales_input() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let k = tape.leaf(Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap());
        let y = x.conv2d(k, None, 1, 0).unwrap();
        assert_eq!(y.value().data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn conv2d_zero_kernels_zero_output() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::full(vec![2, 3, 3], 5.0));
        let k = tape.leaf(Tensor::zeros(vec![4, 2, 2, 2]));
        let y = x.conv2d(k, None, 1, 0).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv2d_kernel_too_large_errors() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 2, 2]));
        let k = tape.leaf(Tensor::zeros(vec![1, 1, 5, 5]));
        assert!(x.conv2d(k, None, 1, 0).is_err());
    }

    #[test]
    fn maxpool_2x2() {
        let tape = Tape::new();
        let x = tape.param(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = x.maxpool2d(2, 2).unwrap();
        assert_eq!(y.value().data(), &[4.0]);
        tape.backward(y.sum()).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_tie_routes_to_first_cell() {
        let tape = Tape::new();
        let x = tape.param(Tensor::full(vec![1, 2, 2], 7.0));
        let y = x.maxpool2d(2, 2).unwrap();
        assert_eq!(y.value().data(), &[7.0]);
        tape.backward(y.sum()).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_window_too_large_errors() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 2, 2]));
        assert!(x.maxpool2d(3, 1).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let tape = Tape::new();
        let logits = tape.param(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let targets = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let loss = logits.softmax_cross_entropy(&targets, &[true]).unwrap();
        assert!((loss.value().scalar_value().unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturated_logits() {
        let tape = Tape::new();
        let logits = tape.param(Tensor::from_rows(&[vec![100.0, 0.0]]).unwrap());
        let targets = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let loss = logits.softmax_cross_entropy(&targets, &[true]).unwrap();
        assert!(loss.value().scalar_value().unwrap() < 1e-12);
    }

    #[test]
    fn cross_entropy_empty_mask_errors() {
        let tape = Tape::new();
        let logits = tape.param(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let targets = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let err = logits
            .softmax_cross_entropy(&targets, &[false])
            .unwrap_err();
        assert!(err.to_string().contains("no supervised rows"));
    }

    #[test]
    fn backward_visits_each_op_once() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let y = x.relu().scale(2.0).sum();
        tape.backward(y).unwrap();
        assert_eq!(tape.ops_visited(), tape.ops_recorded());
        assert_eq!(tape.ops_visited(), 3);
    }

    #[test]
    fn finite_diff_sum_of_squares() {
        let x = Tensor::vector(vec![3.0]);
        let g = finite_diff_grad(
            |t| Ok(t.data().iter().map(|v| v * v).sum()),
            &x,
            1e-6,
        )
        .unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_constant_function() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let g = finite_diff_grad(|_| Ok(42.0), &x, 1e-6).unwrap();
        assert!(g.data().iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn outer_product_values() {
        let tape = Tape::new();
        let u = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let v = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let m = v.outer(u).unwrap();
        assert_eq!(m.value().data(), &[3.0, 6.0, 4.0, 8.0]);
    }
}
