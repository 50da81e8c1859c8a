//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only list of nodes. Every operation reads nodes
//! that already exist, so insertion order is a topological order and the
//! backward pass simply walks the tape from the loss towards the leaves.
//! Graphs are rebuilt for every forward pass.
//!
//! Leaf gradients persist across [`Graph::backward`] calls and accumulate
//! until [`Graph::zero_grad`] is called. Gradients of intermediate nodes
//! are transient and recomputed on every call.

mod gradcheck;
mod kernels;

pub use gradcheck::{grad_check, GradCheckReport, LeafReport, REL_ERROR_FLOOR};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use kernels::{BatchPlan, GELU_C};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, plan: BatchPlan },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Relu { x: Var },
    Gelu { x: Var },
    Abs { x: Var },
    Dropout { x: Var, keep: Vec<f64> },
    Softmax { x: Var },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Transpose { x: Var, d0: usize, d1: usize },
    Reshape { x: Var },
    Narrow { x: Var, dim: usize, start: usize },
    Sum { x: Var },
    Mean { x: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
enum Mode {
    Eval,
    Train(ChaCha8Rng),
}

/// A single forward pass worth of recorded computation.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    mode: Mode,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            mode: Mode::Eval,
        }
    }

    /// Training-mode graph; dropout masks are drawn from a generator seeded
    /// with `seed`.
    pub fn training(seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            mode: Mode::Train(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_training(&self) -> bool {
        matches!(self.mode, Mode::Train(_))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf. Leaves that require grad receive a zeroed gradient
    /// buffer immediately.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        let grad = requires_grad.then(|| vec![0.0; value.numel()]);
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.leaf_grads.push(grad);
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf that requires grad.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0)?.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for g in self.leaf_grads.iter_mut().flatten() {
            g.fill(0.0);
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    // ---------------------------------------------------------------- ops

    /// Batched matrix product `[..., m, k] x [..., k, n] -> [..., m, n]`.
    /// Leading extents must match or be 1 (missing leading extents count
    /// as 1).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let plan = BatchPlan::new(self.dims(a), self.dims(b))?;
        let mut out = vec![0.0; plan.out_numel()];
        kernels::matmul_forward(
            &plan,
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
        );
        let value = Tensor::new(&plan.out_dims, out)?;
        self.push(value, Op::MatMul { a, b, plan }, &[a, b])
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.ends_with(sb) {
            Ok(())
        } else {
            Err(Error::shape(op, sa.dims(), sb.dims()))
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.broadcast_check(name, a, b)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let nb = bv.len();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv[i % nb]))
            .collect();
        let value = Tensor::from_shape(av.shape().clone(), data)?;
        self.push(value, op, &[a, b])
    }

    /// `a + b`; `b` may be any trailing sub-shape of `a` and is broadcast
    /// over the leading extents.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    /// Elementwise product with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::from_shape(xv.shape().clone(), data)?;
        self.push(value, op, &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, |v| v * c, Op::Scale { x, c })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.max(0.0), Op::Relu { x })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(
            x,
            |v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()),
            Op::Gelu { x },
        )
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::abs, Op::Abs { x })
    }

    /// Inverted dropout. Identity in evaluation mode or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        let rng = match &mut self.mode {
            Mode::Train(rng) if rate > 0.0 => rng,
            _ => return Ok(x),
        };
        let scale = 1.0 / (1.0 - rate);
        let keep: Vec<f64> = (0..self.nodes[x.0].value.numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&keep).map(|(v, k)| v * k).collect();
        let value = Tensor::from_shape(xv.shape().clone(), data)?;
        self.push(value, Op::Dropout { x, keep }, &[x])
    }

    /// Softmax over the last extent with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if !xv.is_finite() {
            return Err(Error::NonFinite { op: "softmax" });
        }
        let n = xv.shape().last();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let value = Tensor::from_shape(xv.shape().clone(), data)?;
        self.push(value, Op::Softmax { x }, &[x])
    }

    /// Standardizes each last-dim slice (population variance) then applies
    /// `gain` and `bias`, both of shape `[d]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let d = self.value(x).shape().last();
        for p in [gain, bias] {
            if self.dims(p) != [d] {
                return Err(Error::shape("layer_norm", self.dims(x), self.dims(p)));
            }
        }
        let xv = self.value(x);
        let gv = self.value(gain).data();
        let bv = self.value(bias).data();
        let rows = xv.numel() / d;
        let mut xhat = vec![0.0; xv.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.numel()];
        for (r, row) in xv.data().chunks(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        let value = Tensor::from_shape(xv.shape().clone(), out)?;
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    /// Swaps two axes, materializing the result.
    pub fn transpose(&mut self, x: Var, d0: usize, d1: usize) -> Result<Var> {
        let dims = self.dims(x).to_vec();
        if d0 >= dims.len() || d1 >= dims.len() {
            return Err(Error::Contract(format!(
                "transpose axes ({d0}, {d1}) out of range for {dims:?}"
            )));
        }
        let (out_dims, data) = kernels::swap_axes(&dims, self.value(x).data(), d0, d1);
        let value = Tensor::new(&out_dims, data)?;
        self.push(value, Op::Transpose { x, d0, d1 }, &[x])
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(dims)?;
        self.push(value, Op::Reshape { x }, &[x])
    }

    /// The sub-range `[start, start + len)` of axis `dim`.
    pub fn narrow(&mut self, x: Var, dim: usize, start: usize, len: usize) -> Result<Var> {
        let dims = self.dims(x).to_vec();
        if dim >= dims.len() || len == 0 || start + len > dims[dim] {
            return Err(Error::Contract(format!(
                "narrow(dim={dim}, start={start}, len={len}) invalid for {dims:?}"
            )));
        }
        let outer: usize = dims[..dim].iter().product();
        let inner: usize = dims[dim + 1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dims[dim] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_dims = dims;
        out_dims[dim] = len;
        let value = Tensor::new(&out_dims, data)?;
        self.push(value, Op::Narrow { x, dim, start }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let m = xv.data().iter().sum::<f64>() / xv.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean { x }, &[x])
    }

    /// Mean squared error; shapes must be equal.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.dims(pred) != self.dims(target) {
            return Err(Error::shape("mse", self.dims(pred), self.dims(target)));
        }
        let diff = self.sub(pred, target)?;
        let sq = self.mul(diff, diff)?;
        self.mean(sq)
    }

    /// Mean absolute error; shapes must be equal.
    pub fn mae(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.dims(pred) != self.dims(target) {
            return Err(Error::shape("mae", self.dims(pred), self.dims(target)));
        }
        let diff = self.sub(pred, target)?;
        let a = self.abs(diff)?;
        self.mean(a)
    }

    // ----------------------------------------------------------- backward

    /// Back-propagates from a scalar `loss`, adding into the gradient
    /// buffers of every leaf that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty graph".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.dims(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if let Some(buf) = self.leaf_grads[i].as_mut() {
                    for (b, v) in buf.iter_mut().zip(&g) {
                        *b += v;
                    }
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.numel();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, plan } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| kernels::matmul_grad_a(plan, g, bv, ga));
                acc(*b, &mut |gb| kernels::matmul_grad_b(plan, av, g, gb));
            }
            Op::Add { a, b } | Op::Sub { a, b } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    let nb = gb.len();
                    for (k, v) in g.iter().enumerate() {
                        gb[k % nb] += sign * v;
                    }
                });
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let nb = bv.len();
                acc(*a, &mut |ga| {
                    for (k, v) in g.iter().enumerate() {
                        ga[k] += v * bv[k % nb];
                    }
                });
                acc(*b, &mut |gb| {
                    for (k, v) in g.iter().enumerate() {
                        gb[k % nb] += v * av[k];
                    }
                });
            }
            Op::Scale { x, c } => acc(*x, &mut |gx| {
                for (d, v) in gx.iter_mut().zip(g) {
                    *d += c * v;
                }
            }),
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for k in 0..g.len() {
                        if xv[k] > 0.0 {
                            gx[k] += g[k];
                        }
                    }
                });
            }
            Op::Gelu { x } => {
                let xv = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for k in 0..g.len() {
                        gx[k] += g[k] * kernels::gelu_derivative(xv[k]);
                    }
                });
            }
            Op::Abs { x } => {
                let xv = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for k in 0..g.len() {
                        if xv[k] != 0.0 {
                            gx[k] += g[k] * xv[k].signum();
                        }
                    }
                });
            }
            Op::Dropout { x, keep } => acc(*x, &mut |gx| {
                for k in 0..g.len() {
                    gx[k] += g[k] * keep[k];
                }
            }),
            Op::Softmax { x } => {
                let n = node.value.shape().last();
                acc(*x, &mut |gx| {
                    for ((gr, sr), dr) in g.chunks(n).zip(out.chunks(n)).zip(gx.chunks_mut(n)) {
                        let dot: f64 = gr.iter().zip(sr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dr[j] += sr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.shape().last();
                let gv = self.value(*gain).data();
                acc(*x, &mut |gx| {
                    let mut dxhat = vec![0.0; d];
                    for (r, is) in inv_std.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            dxhat[j] = gr[j] * gv[j];
                            mean_dh += dxhat[j];
                            mean_dh_h += dxhat[j] * hr[j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for j in 0..d {
                            gx[r * d + j] += is * (dxhat[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                });
                acc(*gain, &mut |gg| {
                    for (k, v) in g.iter().enumerate() {
                        gg[k % d] += v * xhat[k];
                    }
                });
                acc(*bias, &mut |gb| {
                    for (k, v) in g.iter().enumerate() {
                        gb[k % d] += v;
                    }
                });
            }
            Op::Transpose { x, d0, d1 } => {
                let (_, back) = kernels::swap_axes(node.value.dims(), g, *d0, *d1);
                acc(*x, &mut |gx| add_into(gx, &back));
            }
            Op::Reshape { x } => acc(*x, &mut |gx| add_into(gx, g)),
            Op::Narrow { x, dim, start } => {
                let in_dims = self.dims(*x);
                let len = node.value.dims()[*dim];
                let outer: usize = in_dims[..*dim].iter().product();
                let inner: usize = in_dims[*dim + 1..].iter().product();
                let full = in_dims[*dim];
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        let src = o * len * inner;
                        add_into(&mut gx[dst..dst + len * inner], &g[src..src + len * inner]);
                    }
                });
            }
            Op::Sum { x } => acc(*x, &mut |gx| {
                for d in gx.iter_mut() {
                    *d += g[0];
                }
            }),
            Op::Mean { x } => acc(*x, &mut |gx| {
                let s = g[0] / gx.len() as f64;
                for d in gx.iter_mut() {
                    *d += s;
                }
            }),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Relu { .. } => "relu",
            Op::Gelu { .. } => "gelu",
            Op::Abs { .. } => "abs",
            Op::Dropout { .. } => "dropout",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Transpose { .. } => "transpose",
            Op::Reshape { .. } => "reshape",
            Op::Narrow { .. } => "narrow",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
        }
    }
}
