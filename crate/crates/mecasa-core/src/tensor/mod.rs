//! Dense n-dimensional tensors with reverse-mode automatic differentiation.
//!
//! Storage is a flat row-major `Vec<f64>`. Each tensor produced by an
//! operation keeps a record of that operation and handles to its inputs, so
//! `backward` on a scalar loss can replay the graph in reverse execution
//! order. Values are immutable after construction except for parameter
//! updates (optimizer) and gradient accumulation.
//!
//! Repeated `backward` through the same leaves without an intervening
//! `reset_grad` is an error; silent accumulation across optimization steps is
//! deliberately disabled.

pub mod kernels;

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{TensorError, TensorResult};
use kernels::{record_ops, sigmoid_scalar, ConvShape};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

struct Inner {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    op: Option<Op>,
}

enum Op {
    Conv2d {
        input: Tensor,
        kernel: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        padding: usize,
        groups: usize,
    },
    Linear {
        input: Tensor,
        weight: Tensor,
        bias: Option<Tensor>,
    },
    Relu {
        input: Tensor,
    },
    Sigmoid {
        input: Tensor,
    },
    Softmax {
        input: Tensor,
        axis: usize,
    },
    Add {
        lhs: Tensor,
        rhs: Tensor,
    },
    /// Elementwise product; `rhs` may be `[B,C]` broadcast over `[B,C,H,W]`.
    Mul {
        lhs: Tensor,
        rhs: Tensor,
    },
    GlobalAvgPool {
        input: Tensor,
    },
    Concat {
        lhs: Tensor,
        rhs: Tensor,
        axis: usize,
    },
    CrossEntropy {
        logits: Tensor,
        labels: Vec<usize>,
    },
    Sum {
        input: Tensor,
    },
    Scale {
        input: Tensor,
        factor: f64,
    },
}

impl Op {
    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Conv2d {
                input, kernel, bias, ..
            } => {
                let mut v = vec![input, kernel];
                if let Some(b) = bias {
                    v.push(b);
                }
                v
            }
            Op::Linear {
                input, weight, bias, ..
            } => {
                let mut v = vec![input, weight];
                if let Some(b) = bias {
                    v.push(b);
                }
                v
            }
            Op::Relu { input }
            | Op::Sigmoid { input }
            | Op::Softmax { input, .. }
            | Op::GlobalAvgPool { input }
            | Op::Sum { input }
            | Op::Scale { input, .. } => vec![input],
            Op::Add { lhs, rhs } | Op::Mul { lhs, rhs } | Op::Concat { lhs, rhs, .. } => {
                vec![lhs, rhs]
            }
            Op::CrossEntropy { logits, .. } => vec![logits],
        }
    }
}

fn check_finite(data: &[f64], context: &str) -> TensorResult<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite {
            context: context.to_string(),
        })
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> TensorResult<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor::raw(shape, data, false, None))
    }

    /// Leaf tensor participating in gradient accumulation.
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> TensorResult<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor::raw(shape, data, true, None))
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::raw(shape, vec![0.0; n], false, None)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::raw(vec![], vec![v], false, None)
    }

    fn raw(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Option<Op>) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                op,
            }),
        }
    }

    fn result(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Tensor {
        let requires_grad = op.parents().iter().any(|p| p.inner.requires_grad);
        let op = if requires_grad { Some(op) } else { None };
        Tensor::raw(shape, data, requires_grad, op)
    }

    pub fn id(&self) -> usize {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Value of a scalar (or single-element) tensor.
    pub fn item(&self) -> f64 {
        let d = self.inner.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor with {} elements", d.len());
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn reset_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// In-place parameter update (optimizer use). Breaks no recorded graph:
    /// only leaves should be updated between steps.
    pub fn apply_update(&self, f: impl FnMut(usize, &mut f64)) {
        let mut f = f;
        for (i, v) in self.inner.data.borrow_mut().iter_mut().enumerate() {
            f(i, v);
        }
    }

    pub fn set_data(&self, data: &[f64]) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(d.len(), data.len());
        d.copy_from_slice(data);
    }

    // ---- forward ops ----

    pub fn conv2d(
        &self,
        kernel: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> TensorResult<Tensor> {
        let ishape = self.shape();
        let kshape = kernel.shape();
        if ishape.len() != 4 {
            return Err(TensorError::Rank {
                expected: 4,
                shape: ishape.to_vec(),
                context: "conv2d input".into(),
            });
        }
        if kshape.len() != 4 {
            return Err(TensorError::Rank {
                expected: 4,
                shape: kshape.to_vec(),
                context: "conv2d kernel".into(),
            });
        }
        let (batch, cin, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
        let (cout, cig, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
        assert!(stride >= 1, "conv2d stride must be >= 1");
        if cin % groups != 0 || cout % groups != 0 {
            return Err(TensorError::Groups { cin, groups });
        }
        if cig != cin / groups {
            return Err(TensorError::DimMismatch {
                axis: 1,
                left: cig,
                right: cin / groups,
                context: "conv2d kernel input-channel axis".into(),
            });
        }
        if h + 2 * padding < kh {
            return Err(TensorError::KernelFit {
                extent: h,
                kernel: kh,
                padding,
            });
        }
        if w + 2 * padding < kw {
            return Err(TensorError::KernelFit {
                extent: w,
                kernel: kw,
                padding,
            });
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(TensorError::DimMismatch {
                    axis: 0,
                    left: b.len(),
                    right: cout,
                    context: "conv2d bias".into(),
                });
            }
        }
        let h_out = kernels::conv_out_extent(h, kh, stride, padding);
        let w_out = kernels::conv_out_extent(w, kw, stride, padding);
        let cs = ConvShape {
            batch,
            cin,
            cout,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            groups,
            h_out,
            w_out,
        };
        let mut out = vec![0.0; batch * cout * h_out * w_out];
        kernels::conv2d_forward(
            &self.data(),
            &kernel.data(),
            bias.map(|b| b.to_vec()).as_deref(),
            &cs,
            &mut out,
        );
        check_finite(&out, "conv2d output")?;
        Ok(Tensor::result(
            vec![batch, cout, h_out, w_out],
            out,
            Op::Conv2d {
                input: self.clone(),
                kernel: kernel.clone(),
                bias: bias.cloned(),
                stride,
                padding,
                groups,
            },
        ))
    }

    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> TensorResult<Tensor> {
        let ishape = self.shape();
        let wshape = weight.shape();
        if ishape.len() != 2 || wshape.len() != 2 {
            return Err(TensorError::Rank {
                expected: 2,
                shape: if ishape.len() != 2 {
                    ishape.to_vec()
                } else {
                    wshape.to_vec()
                },
                context: "linear".into(),
            });
        }
        let (batch, din) = (ishape[0], ishape[1]);
        let (dout, wdin) = (wshape[0], wshape[1]);
        if din != wdin {
            return Err(TensorError::DimMismatch {
                axis: 1,
                left: din,
                right: wdin,
                context: "linear inner dimension".into(),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [dout] {
                return Err(TensorError::DimMismatch {
                    axis: 0,
                    left: b.len(),
                    right: dout,
                    context: "linear bias".into(),
                });
            }
        }
        let mut out = vec![0.0; batch * dout];
        kernels::linear_forward(
            &self.data(),
            &weight.data(),
            bias.map(|b| b.to_vec()).as_deref(),
            batch,
            din,
            dout,
            &mut out,
        );
        check_finite(&out, "linear output")?;
        Ok(Tensor::result(
            vec![batch, dout],
            out,
            Op::Linear {
                input: self.clone(),
                weight: weight.clone(),
                bias: bias.cloned(),
            },
        ))
    }

    pub fn relu(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|&v| v.max(0.0)).collect();
        record_ops(out.len() as u64);
        Tensor::result(
            self.shape().to_vec(),
            out,
            Op::Relu {
                input: self.clone(),
            },
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|&v| sigmoid_scalar(v)).collect();
        record_ops(out.len() as u64);
        Tensor::result(
            self.shape().to_vec(),
            out,
            Op::Sigmoid {
                input: self.clone(),
            },
        )
    }

    pub fn softmax(&self, axis: usize) -> TensorResult<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len().max(1) {
            return Err(TensorError::Axis { axis, shape });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let data = self.data();
        let mut out = vec![0.0; data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let mut m = f64::NEG_INFINITY;
                for j in 0..n {
                    m = m.max(data[idx(j)]);
                }
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (data[idx(j)] - m).exp();
                    out[idx(j)] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[idx(j)] /= sum;
                }
            }
        }
        record_ops(3 * data.len() as u64);
        drop(data);
        Ok(Tensor::result(
            shape,
            out,
            Op::Softmax {
                input: self.clone(),
                axis,
            },
        ))
    }

    pub fn add(&self, other: &Tensor) -> TensorResult<Tensor> {
        same_shape(self, other, "add")?;
        let out: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a + b)
            .collect();
        record_ops(out.len() as u64);
        Tensor::result(
            self.shape().to_vec(),
            out,
            Op::Add {
                lhs: self.clone(),
                rhs: other.clone(),
            },
        )
        .finite_checked("add output")
    }

    /// Elementwise product. `other` may have shape `[B,C]` when `self` is
    /// `[B,C,H,W]`; the per-channel scalar is broadcast over H and W.
    pub fn mul(&self, other: &Tensor) -> TensorResult<Tensor> {
        let out = if self.shape() == other.shape() {
            let v: Vec<f64> = self
                .data()
                .iter()
                .zip(other.data().iter())
                .map(|(a, b)| a * b)
                .collect();
            v
        } else if self.shape().len() == 4
            && other.shape().len() == 2
            && self.shape()[0] == other.shape()[0]
            && self.shape()[1] == other.shape()[1]
        {
            let (b, c, h, w) = dims4(self.shape());
            let plane = h * w;
            let x = self.data();
            let g = other.data();
            let mut v = vec![0.0; x.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let s = g[bi * c + ci];
                    let base = (bi * c + ci) * plane;
                    for p in 0..plane {
                        v[base + p] = x[base + p] * s;
                    }
                }
            }
            v
        } else {
            return Err(TensorError::DimMismatch {
                axis: 0,
                left: self.len(),
                right: other.len(),
                context: format!(
                    "mul shapes {:?} vs {:?} not broadcast-compatible",
                    self.shape(),
                    other.shape()
                ),
            });
        };
        record_ops(out.len() as u64);
        Tensor::result(
            self.shape().to_vec(),
            out,
            Op::Mul {
                lhs: self.clone(),
                rhs: other.clone(),
            },
        )
        .finite_checked("mul output")
    }

    pub fn global_avg_pool(&self) -> TensorResult<Tensor> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(TensorError::Rank {
                expected: 4,
                shape: shape.to_vec(),
                context: "global_avg_pool".into(),
            });
        }
        let (b, c, h, w) = dims4(shape);
        let plane = (h * w) as f64;
        let data = self.data();
        let mut out = vec![0.0; b * c];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * h * w;
                out[bi * c + ci] = data[base..base + h * w].iter().sum::<f64>() / plane;
            }
        }
        record_ops(data.len() as u64);
        drop(data);
        Ok(Tensor::result(
            vec![b, c],
            out,
            Op::GlobalAvgPool {
                input: self.clone(),
            },
        ))
    }

    pub fn concat(&self, other: &Tensor, axis: usize) -> TensorResult<Tensor> {
        let a = self.shape();
        let b = other.shape();
        if a.len() != b.len() {
            return Err(TensorError::Rank {
                expected: a.len(),
                shape: b.to_vec(),
                context: "concat rank".into(),
            });
        }
        if axis >= a.len() {
            return Err(TensorError::Axis {
                axis,
                shape: a.to_vec(),
            });
        }
        for (ax, (&da, &db)) in a.iter().zip(b.iter()).enumerate() {
            if ax != axis && da != db {
                return Err(TensorError::DimMismatch {
                    axis: ax,
                    left: da,
                    right: db,
                    context: "concat non-axis dimension".into(),
                });
            }
        }
        let mut shape = a.to_vec();
        shape[axis] += b[axis];
        let (outer, _, inner) = split_axis(a, axis);
        let an = a[axis];
        let bn = b[axis];
        let ad = self.data();
        let bd = other.data();
        let mut out = Vec::with_capacity(ad.len() + bd.len());
        for o in 0..outer {
            out.extend_from_slice(&ad[o * an * inner..(o + 1) * an * inner]);
            out.extend_from_slice(&bd[o * bn * inner..(o + 1) * bn * inner]);
        }
        drop(ad);
        drop(bd);
        Ok(Tensor::result(
            shape,
            out,
            Op::Concat {
                lhs: self.clone(),
                rhs: other.clone(),
                axis,
            },
        ))
    }

    /// Mean of `-log softmax(logits)[label]` over the batch.
    pub fn cross_entropy(&self, labels: &[usize]) -> TensorResult<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::Rank {
                expected: 2,
                shape: shape.to_vec(),
                context: "cross_entropy logits".into(),
            });
        }
        let (batch, k) = (shape[0], shape[1]);
        if batch != labels.len() {
            return Err(TensorError::DimMismatch {
                axis: 0,
                left: batch,
                right: labels.len(),
                context: "cross_entropy batch".into(),
            });
        }
        let data = self.data();
        let mut total = 0.0;
        for (b, &label) in labels.iter().enumerate() {
            if label >= k {
                return Err(TensorError::LabelRange {
                    label,
                    classes: k,
                    index: b,
                });
            }
            let row = &data[b * k..(b + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        drop(data);
        Ok(Tensor::result(
            vec![],
            vec![total / batch as f64],
            Op::CrossEntropy {
                logits: self.clone(),
                labels: labels.to_vec(),
            },
        ))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum::<f64>();
        Tensor::result(
            vec![],
            vec![s],
            Op::Sum {
                input: self.clone(),
            },
        )
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| v * factor).collect();
        record_ops(out.len() as u64);
        Tensor::result(
            self.shape().to_vec(),
            out,
            Op::Scale {
                input: self.clone(),
                factor,
            },
        )
    }

    fn finite_checked(self, context: &str) -> TensorResult<Tensor> {
        check_finite(&self.data(), context)?;
        Ok(self)
    }

    // ---- backward ----

    /// Reverse-mode accumulation from a scalar loss. Populates `grad` on
    /// every `requires_grad` leaf reachable from this tensor.
    pub fn backward(&self) -> TensorResult<()> {
        if !self.shape().is_empty() && self.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.shape().to_vec(),
            });
        }
        let order = topo_order(self);
        // Leaves must have been reset since the previous backward.
        for t in &order {
            if t.inner.op.is_none() && t.inner.requires_grad && t.inner.grad.borrow().is_some() {
                return Err(TensorError::GradNotReset);
            }
        }
        *self.inner.grad.borrow_mut() = Some(vec![1.0; self.len().max(1)]);
        for t in order.iter().rev() {
            let Some(op) = &t.inner.op else { continue };
            let upstream = t.inner.grad.borrow().clone().unwrap_or_else(|| vec![0.0; t.len()]);
            propagate(t, op, &upstream);
        }
        // Drop intermediate grads; callers only consume leaf grads.
        for t in &order {
            if t.inner.op.is_some() {
                *t.inner.grad.borrow_mut() = None;
            }
        }
        Ok(())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, ctx: &str) -> TensorResult<()> {
    if a.shape() != b.shape() {
        for (axis, (&da, &db)) in a.shape().iter().zip(b.shape().iter()).enumerate() {
            if da != db {
                return Err(TensorError::DimMismatch {
                    axis,
                    left: da,
                    right: db,
                    context: ctx.to_string(),
                });
            }
        }
        return Err(TensorError::Rank {
            expected: a.shape().len(),
            shape: b.shape().to_vec(),
            context: ctx.to_string(),
        });
    }
    Ok(())
}

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    (shape[0], shape[1], shape[2], shape[3])
}

/// (product of dims before axis, axis extent, product of dims after axis)
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    if shape.is_empty() {
        return (1, 1, 1);
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen: HashMap<usize, ()> = HashMap::new();
    // Iterative post-order DFS.
    enum Frame {
        Enter(Tensor),
        Exit(Tensor),
    }
    let mut stack = vec![Frame::Enter(root.clone())];
    while let Some(frame) = stack.pop() {
        match frame {
            Frame::Enter(t) => {
                if seen.contains_key(&t.id()) {
                    continue;
                }
                seen.insert(t.id(), ());
                let parents: Vec<Tensor> = t
                    .inner
                    .op
                    .as_ref()
                    .map(|op| op.parents().into_iter().cloned().collect())
                    .unwrap_or_default();
                stack.push(Frame::Exit(t));
                for p in parents {
                    stack.push(Frame::Enter(p));
                }
            }
            Frame::Exit(t) => order.push(t),
        }
    }
    order
}

fn accumulate(target: &Tensor, delta: &[f64]) {
    let mut g = target.inner.grad.borrow_mut();
    match g.as_mut() {
        Some(acc) => {
            for (a, d) in acc.iter_mut().zip(delta.iter()) {
                *a += d;
            }
        }
        None => *g = Some(delta.to_vec()),
    }
}

fn needs(t: &Tensor) -> bool {
    t.inner.requires_grad
}

fn propagate(node: &Tensor, op: &Op, up: &[f64]) {
    match op {
        Op::Conv2d {
            input,
            kernel,
            bias,
            stride,
            padding,
            groups,
        } => {
            let ishape = input.shape();
            let kshape = kernel.shape();
            let oshape = node.shape();
            let cs = ConvShape {
                batch: ishape[0],
                cin: ishape[1],
                cout: kshape[0],
                h: ishape[2],
                w: ishape[3],
                kh: kshape[2],
                kw: kshape[3],
                stride: *stride,
                padding: *padding,
                groups: *groups,
                h_out: oshape[2],
                w_out: oshape[3],
            };
            let mut d_in = needs(input).then(|| vec![0.0; input.len()]);
            let mut d_k = needs(kernel).then(|| vec![0.0; kernel.len()]);
            let mut d_b = bias
                .as_ref()
                .filter(|b| needs(b))
                .map(|b| vec![0.0; b.len()]);
            kernels::conv2d_backward(
                &input.data(),
                &kernel.data(),
                up,
                &cs,
                d_in.as_deref_mut(),
                d_k.as_deref_mut(),
                d_b.as_deref_mut(),
            );
            if let Some(d) = d_in {
                accumulate(input, &d);
            }
            if let Some(d) = d_k {
                accumulate(kernel, &d);
            }
            if let (Some(b), Some(d)) = (bias, d_b) {
                accumulate(b, &d);
            }
        }
        Op::Linear {
            input,
            weight,
            bias,
        } => {
            let (batch, din) = (input.shape()[0], input.shape()[1]);
            let dout = weight.shape()[0];
            let mut d_in = needs(input).then(|| vec![0.0; input.len()]);
            let mut d_w = needs(weight).then(|| vec![0.0; weight.len()]);
            let mut d_b = bias
                .as_ref()
                .filter(|b| needs(b))
                .map(|b| vec![0.0; b.len()]);
            kernels::linear_backward(
                &input.data(),
                &weight.data(),
                up,
                batch,
                din,
                dout,
                d_in.as_deref_mut(),
                d_w.as_deref_mut(),
                d_b.as_deref_mut(),
            );
            if let Some(d) = d_in {
                accumulate(input, &d);
            }
            if let Some(d) = d_w {
                accumulate(weight, &d);
            }
            if let (Some(b), Some(d)) = (bias, d_b) {
                accumulate(b, &d);
            }
        }
        Op::Relu { input } => {
            // Subgradient at 0 is 0.
            let x = input.data();
            let d: Vec<f64> = x
                .iter()
                .zip(up.iter())
                .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
                .collect();
            drop(x);
            accumulate(input, &d);
        }
        Op::Sigmoid { input } => {
            let y = node.data();
            let d: Vec<f64> = y
                .iter()
                .zip(up.iter())
                .map(|(&yi, &g)| g * yi * (1.0 - yi))
                .collect();
            drop(y);
            accumulate(input, &d);
        }
        Op::Softmax { input, axis } => {
            let y = node.data();
            let (outer, n, inner) = split_axis(node.shape(), *axis);
            let mut d = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * n + j) * inner + i;
                    let dot: f64 = (0..n).map(|j| up[idx(j)] * y[idx(j)]).sum();
                    for j in 0..n {
                        d[idx(j)] = y[idx(j)] * (up[idx(j)] - dot);
                    }
                }
            }
            drop(y);
            accumulate(input, &d);
        }
        Op::Add { lhs, rhs } => {
            if needs(lhs) {
                accumulate(lhs, up);
            }
            if needs(rhs) {
                accumulate(rhs, up);
            }
        }
        Op::Mul { lhs, rhs } => {
            if lhs.shape() == rhs.shape() {
                if needs(lhs) {
                    let r = rhs.data();
                    let d: Vec<f64> = up.iter().zip(r.iter()).map(|(g, v)| g * v).collect();
                    drop(r);
                    accumulate(lhs, &d);
                }
                if needs(rhs) {
                    let l = lhs.data();
                    let d: Vec<f64> = up.iter().zip(l.iter()).map(|(g, v)| g * v).collect();
                    drop(l);
                    accumulate(rhs, &d);
                }
            } else {
                // lhs [B,C,H,W], rhs [B,C]
                let (b, c, h, w) = dims4(lhs.shape());
                let plane = h * w;
                if needs(lhs) {
                    let r = rhs.data();
                    let mut d = vec![0.0; lhs.len()];
                    for bi in 0..b {
                        for ci in 0..c {
                            let s = r[bi * c + ci];
                            let base = (bi * c + ci) * plane;
                            for p in 0..plane {
                                d[base + p] = up[base + p] * s;
                            }
                        }
                    }
                    drop(r);
                    accumulate(lhs, &d);
                }
                if needs(rhs) {
                    let l = lhs.data();
                    let mut d = vec![0.0; rhs.len()];
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * plane;
                            d[bi * c + ci] = (0..plane)
                                .map(|p| up[base + p] * l[base + p])
                                .sum::<f64>();
                        }
                    }
                    drop(l);
                    accumulate(rhs, &d);
                }
            }
        }
        Op::GlobalAvgPool { input } => {
            let (b, c, h, w) = dims4(input.shape());
            let plane = h * w;
            let inv = 1.0 / plane as f64;
            let mut d = vec![0.0; input.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let g = up[bi * c + ci] * inv;
                    let base = (bi * c + ci) * plane;
                    for p in 0..plane {
                        d[base + p] = g;
                    }
                }
            }
            accumulate(input, &d);
        }
        Op::Concat { lhs, rhs, axis } => {
            let a = lhs.shape();
            let b = rhs.shape();
            let (outer, _, inner) = split_axis(a, *axis);
            let an = a[*axis] * inner;
            let bn = b[*axis] * inner;
            if needs(lhs) {
                let mut d = vec![0.0; lhs.len()];
                for o in 0..outer {
                    d[o * an..(o + 1) * an]
                        .copy_from_slice(&up[o * (an + bn)..o * (an + bn) + an]);
                }
                accumulate(lhs, &d);
            }
            if needs(rhs) {
                let mut d = vec![0.0; rhs.len()];
                for o in 0..outer {
                    d[o * bn..(o + 1) * bn]
                        .copy_from_slice(&up[o * (an + bn) + an..(o + 1) * (an + bn)]);
                }
                accumulate(rhs, &d);
            }
        }
        Op::CrossEntropy { logits, labels } => {
            let (batch, k) = (logits.shape()[0], logits.shape()[1]);
            let x = logits.data();
            let scale = up[0] / batch as f64;
            let mut d = vec![0.0; x.len()];
            for (b, &label) in labels.iter().enumerate() {
                let row = &x[b * k..(b + 1) * k];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
                for j in 0..k {
                    let p = (row[j] - m).exp() / sum;
                    d[b * k + j] = scale * (p - if j == label { 1.0 } else { 0.0 });
                }
            }
            drop(x);
            accumulate(logits, &d);
        }
        Op::Sum { input } => {
            let d = vec![up[0]; input.len()];
            accumulate(input, &d);
        }
        Op::Scale { input, factor } => {
            let d: Vec<f64> = up.iter().map(|g| g * factor).collect();
            accumulate(input, &d);
        }
    }
}

/// Central finite differences of a scalar-valued function at `x`.
///
/// Independent of the autodiff path; used as the gradient oracle in tests.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Vec<f64> {
    let base = x.to_vec();
    let shape = x.shape().to_vec();
    let mut grad = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        let mut minus = base.clone();
        minus[i] -= eps;
        let fp = f(&Tensor::new(shape.clone(), plus).unwrap());
        let fm = f(&Tensor::new(shape.clone(), minus).unwrap());
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    grad
}
