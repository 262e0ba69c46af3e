//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every op appends a node holding its output and whatever it needs for the
//! backward pass. [`Graph::backward`] walks the tape in exact reverse order
//! and leaves `dLoss/dLeaf` on every leaf created with `requires_grad`. A
//! graph is consumed by its backward pass; build a fresh one for the next
//! forward.
//!
//! Feature maps are laid out `[H, W, C]`; per-period stacks carry a leading
//! `P` axis.

use crate::error::{Error, Result};
use crate::tensor::{numel, Precision, Tensor};

/// Handle to a node of one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwiseKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

impl std::str::FromStr for Reduction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            other => Err(format!("unknown reduction {other:?} (expected sum or mean)")),
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        padding: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Relu(Var),
    Sigmoid(Var),
    AdaptiveMaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Ewise {
        kind: EwiseKind,
        a: Var,
        b: Var,
    },
    Concat {
        a: Var,
        b: Var,
        axis: usize,
    },
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Transpose(Var),
    Sum(Var),
    L1Loss {
        pred: Var,
        target: Var,
        reduction: Reduction,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    precision: Precision,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_precision(precision: Precision) -> Self {
        Graph {
            precision,
            ..Self::default()
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, mut value: Tensor, requires_grad: bool) -> Var {
        self.precision.round_slice(value.data_mut());
        self.push(value, Op::Leaf, requires_grad)
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

    /// Gradient accumulated on a leaf by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        mut value: Tensor,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var> {
        self.precision.round_slice(value.data_mut());
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    /// Cross-correlation of an `[H, W, Cin]` map with a `[k, k, Cin, Cout]`
    /// kernel, zero padded by `padding` on every side.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        padding: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(kernel), padding)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.cout] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    lhs: vec![geom.cout],
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let out = conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let out = Tensor::new([geom.out_h, geom.out_w, geom.cout], out)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        self.push_checked(
            "conv2d",
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
            },
            &deps,
        )
    }

    /// Matrix product over the trailing axis, broadcast over leading axes.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let in_shape = self.shape(input).to_vec();
        let w_shape = self.shape(weight).to_vec();
        if w_shape.len() != 2 || in_shape.last() != Some(&w_shape[0]) {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: in_shape,
                rhs: w_shape,
            });
        }
        let (din, dout) = (w_shape[0], w_shape[1]);
        if let Some(b) = bias {
            if self.shape(b) != [dout] {
                return Err(Error::ShapeMismatch {
                    op: "linear",
                    lhs: vec![dout],
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let rows = numel(&in_shape).checked_div(din).unwrap_or(0);
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let mut out = vec![0.0; rows * dout];
        for (r, y) in out.chunks_exact_mut(dout.max(1)).take(rows).enumerate() {
            if let Some(b) = bias {
                y.copy_from_slice(self.value(b).data());
            }
            for (i, &xi) in x[r * din..(r + 1) * din].iter().enumerate() {
                let wrow = &w[i * dout..(i + 1) * dout];
                for (yo, &wo) in y.iter_mut().zip(wrow) {
                    *yo += xi * wo;
                }
            }
        }
        let mut out_shape = in_shape;
        *out_shape.last_mut().unwrap() = dout;
        let out = Tensor::new(out_shape, out)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        self.push_checked(
            "linear",
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
            &deps,
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push_checked("relu", out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push_checked("sigmoid", out, Op::Sigmoid(x), &[x])
    }

    /// Per-channel max over adaptive bins. Bin `i` of an extent-`n` axis
    /// pooled to `m` covers `[floor(i*n/m), ceil((i+1)*n/m))`.
    pub fn adaptive_max_pool2d(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let [h, w, c] = hwc("adaptive_max_pool2d", &shape)?;
        if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
            return Err(Error::invalid(
                "adaptive_max_pool2d",
                format!("cannot pool {h}x{w} to {out_h}x{out_w}"),
            ));
        }
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(out_h * out_w * c);
        let mut argmax = Vec::with_capacity(out_h * out_w * c);
        for i in 0..out_h {
            let (r0, r1) = adaptive_bin(i, h, out_h);
            for j in 0..out_w {
                let (c0, c1) = adaptive_bin(j, w, out_w);
                for ch in 0..c {
                    let mut best = (r0 * w + c0) * c + ch;
                    for r in r0..r1 {
                        for col in c0..c1 {
                            let at = (r * w + col) * c + ch;
                            if x[at] > x[best] {
                                best = at;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::new([out_h, out_w, c], out)?;
        self.push_checked(
            "adaptive_max_pool2d",
            out,
            Op::AdaptiveMaxPool { input, argmax },
            &[input],
        )
    }

    /// Mean over the two spatial axes of an `[H, W, C]` map.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let [h, w, c] = hwc("global_avg_pool", &shape)?;
        let x = self.value(input).data();
        let mut out = vec![0.0; c];
        for px in x.chunks_exact(c.max(1)) {
            for (o, &v) in out.iter_mut().zip(px) {
                *o += v;
            }
        }
        let scale = 1.0 / (h * w) as f64;
        out.iter_mut().for_each(|o| *o *= scale);
        let out = Tensor::new([c], out)?;
        self.push_checked("global_avg_pool", out, Op::GlobalAvgPool(input), &[input])
    }

    pub fn ewise(&mut self, kind: EwiseKind, a: Var, b: Var) -> Result<Var> {
        let bc = Broadcast::new(self.shape(a), self.shape(b))?;
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; numel(&bc.out)];
        bc.for_each(|o, ia, ib| {
            out[o] = match kind {
                EwiseKind::Add => xa[ia] + xb[ib],
                EwiseKind::Sub => xa[ia] - xb[ib],
                EwiseKind::Mul => xa[ia] * xb[ib],
            }
        });
        let out = Tensor::new(bc.out, out)?;
        self.push_checked("ewise", out, Op::Ewise { kind, a, b }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise(EwiseKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise(EwiseKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise(EwiseKind::Mul, a, b)
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && sa
                .iter()
                .zip(&sb)
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: sa,
                rhs: sb,
            });
        }
        let outer = numel(&sa[..axis]);
        let inner = numel(&sa[axis + 1..]);
        let (ca, cb) = (sa[axis] * inner, sb[axis] * inner);
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(xa.len() + xb.len());
        for o in 0..outer {
            out.extend_from_slice(&xa[o * ca..(o + 1) * ca]);
            out.extend_from_slice(&xb[o * cb..(o + 1) * cb]);
        }
        let mut shape = sa;
        shape[axis] += sb[axis];
        let out = Tensor::new(shape, out)?;
        self.push_checked("concat", out, Op::Concat { a, b, axis }, &[a, b])
    }

    /// Range `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = self.value(input).narrow(axis, start, len)?;
        self.push_checked("narrow", out, Op::Narrow { input, axis, start }, &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape)?;
        self.push_checked("reshape", out, Op::Reshape(input), &[input])
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let &[r, c] = shape.as_slice() else {
            return Err(Error::invalid(
                "transpose",
                format!("expected a matrix, got shape {shape:?}"),
            ));
        };
        let out = Tensor::new([c, r], transpose(self.value(input).data(), r, c))?;
        self.push_checked("transpose", out, Op::Transpose(input), &[input])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(input).data().iter().sum());
        self.push_checked("sum", out, Op::Sum(input), &[input])
    }

    pub fn l1_loss(&mut self, pred: Var, target: Var, reduction: Reduction) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::ShapeMismatch {
                op: "l1_loss",
                lhs: self.shape(pred).to_vec(),
                rhs: self.shape(target).to_vec(),
            });
        }
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let mut total: f64 = p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum();
        if reduction == Reduction::Mean && !p.is_empty() {
            total /= p.len() as f64;
        }
        self.push_checked(
            "l1_loss",
            Tensor::scalar(total),
            Op::L1Loss {
                pred,
                target,
                reduction,
            },
            &[pred, target],
        )
    }

    /// Reverse pass from a scalar `loss`. Afterwards every `requires_grad`
    /// leaf holds its gradient (zeros when the loss does not depend on it).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::invalid("backward", "loss does not belong to this graph"));
        }
        let loss_shape = self.shape(loss).to_vec();
        if numel(&loss_shape) != 1 {
            return Err(Error::NotScalar(loss_shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_shape, 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                if grads[id].is_none() {
                    grads[id] = Some(Tensor::zeros(node.value.shape().to_vec()));
                }
                continue;
            }
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            self.backward_node(id, upstream.data(), &mut grads);
        }
        // Leaves created after the loss never saw the reverse pass.
        for (id, node) in self.nodes.iter().enumerate().skip(loss.0 + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                grads[id] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, id: usize, gy: &[f64], grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape().to_vec()));
            f(slot.data_mut());
        };

        match &nodes[id].op {
            Op::Leaf => {}
            &Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
            } => {
                let geom = ConvGeom::new(nodes[input.0].value.shape(), nodes[kernel.0].value.shape(), padding)
                    .expect("validated in forward");
                if wants(input) {
                    acc(input, &mut |gx| conv2d_backward_input(&geom, gy, val(kernel), gx));
                }
                if wants(kernel) {
                    acc(kernel, &mut |gk| conv2d_backward_kernel(&geom, val(input), gy, gk));
                }
                if let Some(b) = bias.filter(|&b| wants(b)) {
                    acc(b, &mut |gb| {
                        for px in gy.chunks_exact(geom.cout) {
                            for (g, &d) in gb.iter_mut().zip(px) {
                                *g += d;
                            }
                        }
                    });
                }
            }
            &Op::Linear {
                input,
                weight,
                bias,
            } => {
                let ws = nodes[weight.0].value.shape();
                let (din, dout) = (ws[0], ws[1]);
                let rows = gy.len().checked_div(dout).unwrap_or(0);
                if wants(input) {
                    let w = val(weight);
                    acc(input, &mut |gx| {
                        for r in 0..rows {
                            let gyr = &gy[r * dout..(r + 1) * dout];
                            for i in 0..din {
                                let wrow = &w[i * dout..(i + 1) * dout];
                                gx[r * din + i] += dot(gyr, wrow);
                            }
                        }
                    });
                }
                if wants(weight) {
                    let x = val(input);
                    acc(weight, &mut |gw| {
                        for r in 0..rows {
                            let gyr = &gy[r * dout..(r + 1) * dout];
                            for i in 0..din {
                                let xi = x[r * din + i];
                                let grow = &mut gw[i * dout..(i + 1) * dout];
                                for (g, &d) in grow.iter_mut().zip(gyr) {
                                    *g += xi * d;
                                }
                            }
                        }
                    });
                }
                if let Some(b) = bias.filter(|&b| wants(b)) {
                    acc(b, &mut |gb| {
                        for gyr in gy.chunks_exact(dout.max(1)) {
                            for (g, &d) in gb.iter_mut().zip(gyr) {
                                *g += d;
                            }
                        }
                    });
                }
            }
            &Op::Relu(x) => {
                let xv = val(x);
                acc(x, &mut |gx| {
                    for ((g, &d), &xi) in gx.iter_mut().zip(gy).zip(xv) {
                        if xi > 0.0 {
                            *g += d;
                        }
                    }
                });
            }
            &Op::Sigmoid(x) => {
                let s = nodes[id].value.data();
                acc(x, &mut |gx| {
                    for ((g, &d), &si) in gx.iter_mut().zip(gy).zip(s) {
                        *g += d * si * (1.0 - si);
                    }
                });
            }
            Op::AdaptiveMaxPool { input, argmax } => {
                acc(*input, &mut |gx| {
                    for (&at, &d) in argmax.iter().zip(gy) {
                        gx[at] += d;
                    }
                });
            }
            &Op::GlobalAvgPool(input) => {
                let s = nodes[input.0].value.shape();
                let (hw, c) = (s[0] * s[1], s[2]);
                let scale = 1.0 / hw as f64;
                acc(input, &mut |gx| {
                    for px in gx.chunks_exact_mut(c.max(1)) {
                        for (g, &d) in px.iter_mut().zip(gy) {
                            *g += d * scale;
                        }
                    }
                });
            }
            &Op::Ewise { kind, a, b } => {
                let bc = Broadcast::new(nodes[a.0].value.shape(), nodes[b.0].value.shape())
                    .expect("validated in forward");
                if wants(a) {
                    let xb = val(b);
                    acc(a, &mut |ga| {
                        bc.for_each(|o, ia, ib| {
                            ga[ia] += match kind {
                                EwiseKind::Add | EwiseKind::Sub => gy[o],
                                EwiseKind::Mul => gy[o] * xb[ib],
                            }
                        })
                    });
                }
                if wants(b) {
                    let xa = val(a);
                    acc(b, &mut |gb| {
                        bc.for_each(|o, ia, ib| {
                            gb[ib] += match kind {
                                EwiseKind::Add => gy[o],
                                EwiseKind::Sub => -gy[o],
                                EwiseKind::Mul => gy[o] * xa[ia],
                            }
                        })
                    });
                }
            }
            &Op::Concat { a, b, axis } => {
                let sa = nodes[a.0].value.shape();
                let sb = nodes[b.0].value.shape();
                let outer = numel(&sa[..axis]);
                let inner = numel(&sa[axis + 1..]);
                let (ca, cb) = (sa[axis] * inner, sb[axis] * inner);
                if wants(a) {
                    acc(a, &mut |ga| {
                        for o in 0..outer {
                            let src = &gy[o * (ca + cb)..o * (ca + cb) + ca];
                            add_into(&mut ga[o * ca..(o + 1) * ca], src);
                        }
                    });
                }
                if wants(b) {
                    acc(b, &mut |gb| {
                        for o in 0..outer {
                            let src = &gy[o * (ca + cb) + ca..(o + 1) * (ca + cb)];
                            add_into(&mut gb[o * cb..(o + 1) * cb], src);
                        }
                    });
                }
            }
            &Op::Narrow { input, axis, start } => {
                let s = nodes[input.0].value.shape();
                let len = nodes[id].value.shape()[axis];
                let outer = numel(&s[..axis]);
                let inner = numel(&s[axis + 1..]);
                let extent = s[axis];
                acc(input, &mut |gx| {
                    for o in 0..outer {
                        let dst = o * extent * inner + start * inner;
                        add_into(&mut gx[dst..dst + len * inner], &gy[o * len * inner..(o + 1) * len * inner]);
                    }
                });
            }
            &Op::Reshape(input) => acc(input, &mut |gx| add_into(gx, gy)),
            &Op::Transpose(input) => {
                let s = nodes[input.0].value.shape();
                let back = transpose(gy, s[1], s[0]);
                acc(input, &mut |gx| add_into(gx, &back));
            }
            &Op::Sum(input) => {
                let d = gy[0];
                acc(input, &mut |gx| gx.iter_mut().for_each(|g| *g += d));
            }
            &Op::L1Loss {
                pred,
                target,
                reduction,
            } => {
                let (p, t) = (val(pred), val(target));
                let scale = match reduction {
                    Reduction::Sum => gy[0],
                    Reduction::Mean => gy[0] / p.len().max(1) as f64,
                };
                let sign = |a: f64, b: f64| {
                    if a > b {
                        1.0
                    } else if a < b {
                        -1.0
                    } else {
                        0.0
                    }
                };
                if wants(pred) {
                    acc(pred, &mut |gp| {
                        for ((g, &a), &b) in gp.iter_mut().zip(p).zip(t) {
                            *g += scale * sign(a, b);
                        }
                    });
                }
                if wants(target) {
                    acc(target, &mut |gt| {
                        for ((g, &a), &b) in gt.iter_mut().zip(p).zip(t) {
                            *g -= scale * sign(a, b);
                        }
                    });
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row range `[start, end)` of adaptive bin `i` when `n` rows pool to `m`.
pub fn adaptive_bin(i: usize, n: usize, m: usize) -> (usize, usize) {
    let start = i * n / m;
    let end = ((i + 1) * n).div_ceil(m);
    (start, end)
}

fn hwc(op: &'static str, shape: &[usize]) -> Result<[usize; 3]> {
    match *shape {
        [h, w, c] => Ok([h, w, c]),
        _ => Err(Error::invalid(op, format!("expected an [H, W, C] map, got {shape:?}"))),
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn new(input: &[usize], kernel: &[usize], pad: usize) -> Result<Self> {
        let [h, w, cin] = hwc("conv2d", input)?;
        let &[k, k2, kc, cout] = kernel else {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel must be [k, k, Cin, Cout], got {kernel:?}"),
            ));
        };
        if k != k2 {
            return Err(Error::invalid("conv2d", format!("kernel is not square: {k}x{k2}")));
        }
        if k % 2 == 0 {
            return Err(Error::invalid("conv2d", format!("kernel size {k} is even")));
        }
        if kc != cin {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: kernel.to_vec(),
            });
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::invalid(
                "conv2d",
                format!("{h}x{w} input with padding {pad} is smaller than the {k}x{k} kernel"),
            ));
        }
        Ok(ConvGeom {
            h,
            w,
            cin,
            cout,
            k,
            pad,
            out_h: h + 2 * pad - k + 1,
            out_w: w + 2 * pad - k + 1,
        })
    }

    /// Input coordinate hit by output `o` and kernel tap `t`, if inside.
    #[inline]
    fn src(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        (o + t).checked_sub(self.pad).filter(|&i| i < extent)
    }
}

fn conv2d_forward(g: &ConvGeom, x: &[f64], kernel: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (cin, cout, k) = (g.cin, g.cout, g.k);
    let mut out = vec![0.0; g.out_h * g.out_w * cout];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let y = &mut out[(oy * g.out_w + ox) * cout..][..cout];
            if let Some(b) = bias {
                y.copy_from_slice(b);
            }
            for ky in 0..k {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..k {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let px = &x[(iy * g.w + ix) * cin..][..cin];
                    let taps = &kernel[(ky * k + kx) * cin * cout..][..cin * cout];
                    for (&v, row) in px.iter().zip(taps.chunks_exact(cout)) {
                        for (yo, &wk) in y.iter_mut().zip(row) {
                            *yo += v * wk;
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward_input(g: &ConvGeom, gy: &[f64], kernel: &[f64], gx: &mut [f64]) {
    let (cin, cout, k) = (g.cin, g.cout, g.k);
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let d = &gy[(oy * g.out_w + ox) * cout..][..cout];
            for ky in 0..k {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..k {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let gpx = &mut gx[(iy * g.w + ix) * cin..][..cin];
                    let taps = &kernel[(ky * k + kx) * cin * cout..][..cin * cout];
                    for (gv, row) in gpx.iter_mut().zip(taps.chunks_exact(cout)) {
                        *gv += dot(d, row);
                    }
                }
            }
        }
    }
}

fn conv2d_backward_kernel(g: &ConvGeom, x: &[f64], gy: &[f64], gk: &mut [f64]) {
    let (cin, cout, k) = (g.cin, g.cout, g.k);
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let d = &gy[(oy * g.out_w + ox) * cout..][..cout];
            for ky in 0..k {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..k {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let px = &x[(iy * g.w + ix) * cin..][..cin];
                    let taps = &mut gk[(ky * k + kx) * cin * cout..][..cin * cout];
                    for (&v, row) in px.iter().zip(taps.chunks_exact_mut(cout)) {
                        for (gw, &dy) in row.iter_mut().zip(d) {
                            *gw += v * dy;
                        }
                    }
                }
            }
        }
    }
}

/// Trailing-aligned broadcast of two shapes.
struct Broadcast {
    out: Vec<usize>,
    a: Vec<usize>,
    b: Vec<usize>,
}

impl Broadcast {
    fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let rank = a.len().max(b.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(a), pad(b));
        let mut out = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            out.push(match (x, y) {
                _ if x == y => x,
                (1, _) => y,
                (_, 1) => x,
                _ => {
                    return Err(Error::ShapeMismatch {
                        op: "ewise",
                        lhs: a.to_vec(),
                        rhs: b.to_vec(),
                    })
                }
            });
        }
        Ok(Broadcast { out, a: pa, b: pb })
    }

    /// Calls `f(out_index, a_index, b_index)` for every output element in
    /// row-major order.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n = numel(&self.out);
        let (na, nb) = (numel(&self.a), numel(&self.b));
        let a_tiles = is_suffix_tile(&self.a, &self.out);
        let b_tiles = is_suffix_tile(&self.b, &self.out);
        if a_tiles && b_tiles {
            for o in 0..n {
                f(o, o % na.max(1), o % nb.max(1));
            }
            return;
        }
        let sa = broadcast_strides(&self.a, &self.out);
        let sb = broadcast_strides(&self.b, &self.out);
        let mut idx = vec![0usize; self.out.len()];
        let (mut ia, mut ib) = (0usize, 0usize);
        for o in 0..n {
            f(o, ia, ib);
            for ax in (0..idx.len()).rev() {
                idx[ax] += 1;
                ia += sa[ax];
                ib += sb[ax];
                if idx[ax] < self.out[ax] {
                    break;
                }
                ia -= sa[ax] * self.out[ax];
                ib -= sb[ax] * self.out[ax];
                idx[ax] = 0;
            }
        }
    }
}

/// True when `shape` is all ones up to a suffix that equals `out`'s suffix,
/// so flat indices map by modulo.
fn is_suffix_tile(shape: &[usize], out: &[usize]) -> bool {
    let first = shape.iter().position(|&d| d != 1).unwrap_or(shape.len());
    shape[first..] == out[first..]
}

fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut s = 1;
    for ax in (0..shape.len()).rev() {
        strides[ax] = if shape[ax] == out[ax] { s } else { 0 };
        s *= shape[ax];
    }
    strides
}
