//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles in
//! execution order, so node indices are already a topological order and
//! [`Graph::backward`] is a single reverse sweep.

use crate::error::{Error, Result};
use crate::tensorcore::kernels;
use crate::tensorcore::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    MeanOf(Vec<Var>),
    MaxOf { inputs: Vec<Var>, winner: usize },
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Var, stride: usize, padding: usize },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    AvgPool2d { x: Var },
    Dense { x: Var, w: Var, b: Var },
    StatsPool(Var),
    Cosine(Var, Var),
    SoftmaxXent { logits: Var, label: usize, probs: Vec<f64> },
    Splice { x: Var, w: Var, b: Var, offsets: Vec<isize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Operation recorder. Rebuilt for every forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf, if the leaf was reachable.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

pub const STATS_EPS: f64 = 1e-10;

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

    /// Drops every node recorded after `mark` (a value of [`Graph::len`]).
    /// Handles issued before the mark stay valid.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Records a leaf. Its gradient is tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.push(t.detached(), Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.detached(), Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn binary_shape(&self, a: Var, b: Var, what: &str) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb || self.data(b).len() == 1 {
            Ok(sa.to_vec())
        } else if self.data(a).len() == 1 {
            Ok(sb.to_vec())
        } else {
            Err(Error::InvalidShape(format!(
                "{what}: operand shapes {sa:?} and {sb:?} differ"
            )))
        }
    }

    fn broadcast(&self, v: Var, i: usize) -> f64 {
        let d = self.data(v);
        if d.len() == 1 {
            d[0]
        } else {
            d[i]
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape(a, b, "add")?;
        let n: usize = shape.iter().product();
        let out = (0..n)
            .map(|i| self.broadcast(a, i) + self.broadcast(b, i))
            .collect();
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape(a, b, "sub")?;
        let n: usize = shape.iter().product();
        let out = (0..n)
            .map(|i| self.broadcast(a, i) - self.broadcast(b, i))
            .collect();
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Sub(a, b), ng))
    }

    /// Elementwise product; a single-element operand broadcasts.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape(a, b, "mul")?;
        let n: usize = shape.iter().product();
        let out = (0..n)
            .map(|i| self.broadcast(a, i) * self.broadcast(b, i))
            .collect();
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mul(a, b), ng))
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let t = &self.nodes[x.0].value;
        let out = t.data().iter().map(|v| scale * v + shift).collect();
        let shape = t.shape().to_vec();
        let ng = self.ng(&[x]);
        self.push(Tensor::from_parts(shape, out), Op::Affine { x, scale }, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let out = t.data().iter().map(|v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        let ng = self.ng(&[x]);
        self.push(Tensor::from_parts(shape, out), Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let out = t.data().iter().map(|&v| kernels::sigmoid(v)).collect();
        let shape = t.shape().to_vec();
        let ng = self.ng(&[x]);
        self.push(Tensor::from_parts(shape, out), Op::Sigmoid(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// Elementwise mean of equally shaped tensors.
    pub fn mean_of(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::EmptyInput("mean_of needs at least one tensor".into()))?;
        let shape = self.shape(first).to_vec();
        let mut out = vec![0.0; self.data(first).len()];
        for &x in xs {
            if self.shape(x) != shape.as_slice() {
                return Err(Error::InvalidShape(format!(
                    "mean_of: {:?} vs {shape:?}",
                    self.shape(x)
                )));
            }
            out.iter_mut().zip(self.data(x)).for_each(|(o, v)| *o += v);
        }
        let inv = 1.0 / xs.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let ng = self.ng(xs);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MeanOf(xs.to_vec()), ng))
    }

    /// Maximum over single-element tensors; gradient flows to the first maximiser.
    pub fn max_of(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::EmptyInput("max_of needs at least one scalar".into()));
        }
        let mut winner = 0;
        let mut best = f64::NEG_INFINITY;
        for (i, &x) in xs.iter().enumerate() {
            if self.data(x).len() != 1 {
                return Err(Error::InvalidShape(format!(
                    "max_of expects scalars, got {:?}",
                    self.shape(x)
                )));
            }
            let v = self.data(x)[0];
            if v > best || i == 0 {
                best = v;
                winner = i;
            }
        }
        let ng = self.ng(xs);
        Ok(self.push(
            Tensor::scalar(best),
            Op::MaxOf {
                inputs: xs.to_vec(),
                winner,
            },
            ng,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.nodes[x.0].value.detached().reshape(shape)?;
        let ng = self.ng(&[x]);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// 2-D cross-correlation of `x: [C_in,H,W]` with `w: [C_out,C_in,k,k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = kernels::ConvGeom::new(self.shape(x), self.shape(w), stride, padding)?;
        if self.shape(b) != [geom.c_out] {
            return Err(Error::InvalidShape(format!(
                "conv2d bias: expected [{}], got {:?}",
                geom.c_out,
                self.shape(b)
            )));
        }
        let out = kernels::conv2d_forward(&geom, self.data(x), self.data(w), self.data(b));
        let ng = self.ng(&[x, w, b]);
        Ok(self.push(
            Tensor::from_parts(vec![geom.c_out, geom.out_h, geom.out_w], out),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            },
            ng,
        ))
    }

    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize, padding: usize) -> Result<Var> {
        let (out, argmax, shape) =
            kernels::max_pool2d_forward(self.shape(x), self.data(x), k, stride, padding)?;
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MaxPool2d { x, argmax }, ng))
    }

    pub fn adaptive_avg_pool2d(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = kernels::adaptive_avg_pool2d_forward(self.shape(x), self.data(x), out_h, out_w)?;
        let c = self.shape(x)[0];
        let ng = self.ng(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![c, out_h, out_w], out),
            Op::AvgPool2d { x },
            ng,
        ))
    }

    /// Affine map `w·x + b` for `x: [D_in]`, `w: [D_out,D_in]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (ws, xs) = (self.shape(w), self.shape(x));
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(Error::InvalidShape(format!(
                "dense: weight {ws:?} incompatible with input {xs:?}"
            )));
        }
        let (d_out, d_in) = (ws[0], ws[1]);
        if self.shape(b) != [d_out] {
            return Err(Error::InvalidShape(format!(
                "dense bias: expected [{d_out}], got {:?}",
                self.shape(b)
            )));
        }
        let (xd, wd, bd) = (self.data(x), self.data(w), self.data(b));
        let out = (0..d_out)
            .map(|o| bd[o] + kernels::dot(&wd[o * d_in..(o + 1) * d_in], xd))
            .collect();
        let ng = self.ng(&[x, w, b]);
        Ok(self.push(Tensor::from_parts(vec![d_out], out), Op::Dense { x, w, b }, ng))
    }

    /// Per-row mean and population standard deviation of `x: [D,T]`, concatenated.
    pub fn stats_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::InvalidShape(format!("stats_pool expects [D,T], got {s:?}")));
        }
        let (d, t) = (s[0], s[1]);
        let xd = self.data(x);
        let mut out = vec![0.0; 2 * d];
        for r in 0..d {
            let row = &xd[r * t..(r + 1) * t];
            let (mean, var) = kernels::mean_var(row);
            out[r] = mean;
            out[d + r] = (var + STATS_EPS).sqrt();
        }
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::from_parts(vec![2 * d], out), Op::StatsPool(x), ng))
    }

    /// Cosine similarity of two equally sized tensors, as a single-element tensor.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.data(a).len() != self.data(b).len() {
            return Err(Error::InvalidShape(format!(
                "cosine: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let c = kernels::cosine(self.data(a), self.data(b))?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::scalar(c), Op::Cosine(a, b), ng))
    }

    /// Cross-entropy of `softmax(logits)` against `label`.
    pub fn softmax_xent(&mut self, logits: Var, label: usize) -> Result<Var> {
        let l = self.data(logits);
        if label >= l.len() {
            return Err(Error::Contract(format!(
                "label {label} out of range for {} classes",
                l.len()
            )));
        }
        let probs = kernels::softmax(l);
        let loss = kernels::log_sum_exp(l) - l[label];
        let ng = self.ng(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                label,
                probs,
            },
            ng,
        ))
    }

    /// Time-delay layer: splices frames of `x: [D,T]` at `offsets`, then applies
    /// `w: [D_out, D·|offsets|]` per output frame. Only frames whose whole context
    /// lies inside the input are produced.
    pub fn splice_dense(&mut self, x: Var, w: Var, b: Var, offsets: &[isize]) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[0] * offsets.len() {
            return Err(Error::InvalidShape(format!(
                "splice_dense: weight {ws:?} incompatible with input {xs:?} and {} offsets",
                offsets.len()
            )));
        }
        if self.shape(b) != [ws[0]] {
            return Err(Error::InvalidShape(format!(
                "splice_dense bias: expected [{}], got {:?}",
                ws[0],
                self.shape(b)
            )));
        }
        let (out, t_out) =
            kernels::splice_forward(&xs, self.data(x), ws[0], self.data(w), self.data(b), offsets)?;
        let ng = self.ng(&[x, w, b]);
        Ok(self.push(
            Tensor::from_parts(vec![ws[0], t_out], out),
            Op::Splice {
                x,
                w,
                b,
                offsets: offsets.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        for (node, slot) in self.nodes.iter().zip(grads.iter_mut()) {
            if node.needs_grad && matches!(node.op, Op::Leaf) && slot.is_none() {
                *slot = Some(vec![0.0; node.value.numel()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(ga) = self.acc(grads, *a) {
                    reduce_into(ga, g, 1.0);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    reduce_into(gb, g, sign);
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.nodes[a.0].needs_grad {
                    let contrib: Vec<f64> =
                        g.iter().enumerate().map(|(i, gi)| gi * self.broadcast(b, i)).collect();
                    if let Some(ga) = self.acc(grads, a) {
                        reduce_into(ga, &contrib, 1.0);
                    }
                }
                if self.nodes[b.0].needs_grad {
                    let contrib: Vec<f64> =
                        g.iter().enumerate().map(|(i, gi)| gi * self.broadcast(a, i)).collect();
                    if let Some(gb) = self.acc(grads, b) {
                        reduce_into(gb, &contrib, 1.0);
                    }
                }
            }
            Op::Affine { x, scale } => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, gi)| *a += scale * gi);
                }
            }
            Op::Relu(x) => {
                let xd = self.data(*x);
                if let Some(gx) = self.acc(grads, *x) {
                    for ((a, gi), xv) in gx.iter_mut().zip(g).zip(xd) {
                        if *xv > 0.0 {
                            *a += gi;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                if let Some(gx) = self.acc(grads, *x) {
                    for ((a, gi), yv) in gx.iter_mut().zip(g).zip(y) {
                        *a += gi * yv * (1.0 - yv);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|a| *a += s);
                }
            }
            Op::MeanOf(xs) => {
                let inv = 1.0 / xs.len() as f64;
                for &x in xs {
                    if let Some(gx) = self.acc(grads, x) {
                        gx.iter_mut().zip(g).for_each(|(a, gi)| *a += gi * inv);
                    }
                }
            }
            Op::MaxOf { inputs, winner } => {
                if let Some(gx) = self.acc(grads, inputs[*winner]) {
                    gx[0] += g[0];
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, gi)| *a += gi);
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let geom = kernels::ConvGeom::new(self.shape(*x), self.shape(*w), *stride, *padding)
                    .expect("geometry validated in forward");
                let need_x = self.nodes[x.0].needs_grad;
                let need_w = self.nodes[w.0].needs_grad;
                let (gx, gw) = kernels::conv2d_backward(
                    &geom,
                    self.data(*x),
                    self.data(*w),
                    g,
                    need_x,
                    need_w,
                );
                if let (Some(dst), Some(src)) = (self.acc(grads, *x), gx) {
                    dst.iter_mut().zip(&src).for_each(|(a, v)| *a += v);
                }
                if let (Some(dst), Some(src)) = (self.acc(grads, *w), gw) {
                    dst.iter_mut().zip(&src).for_each(|(a, v)| *a += v);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    let p = geom.out_h * geom.out_w;
                    for (co, a) in gb.iter_mut().enumerate() {
                        *a += g[co * p..(co + 1) * p].iter().sum::<f64>();
                    }
                }
            }
            Op::MaxPool2d { x, argmax } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (gi, &src) in g.iter().zip(argmax) {
                        gx[src] += gi;
                    }
                }
            }
            Op::AvgPool2d { x } => {
                let in_shape = self.shape(*x).to_vec();
                let out_shape = node.value.shape();
                if let Some(gx) = self.acc(grads, *x) {
                    kernels::adaptive_avg_pool2d_backward(&in_shape, out_shape[1], out_shape[2], g, gx);
                }
            }
            Op::Dense { x, w, b } => {
                let d_in = self.shape(*x)[0];
                let (xd, wd) = (self.data(*x), self.data(*w));
                if let Some(gx) = self.acc(grads, *x) {
                    for (o, gi) in g.iter().enumerate() {
                        let row = &wd[o * d_in..(o + 1) * d_in];
                        gx.iter_mut().zip(row).for_each(|(a, wv)| *a += gi * wv);
                    }
                }
                if let Some(gw) = self.acc(grads, *w) {
                    for (o, gi) in g.iter().enumerate() {
                        let row = &mut gw[o * d_in..(o + 1) * d_in];
                        row.iter_mut().zip(xd).for_each(|(a, xv)| *a += gi * xv);
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(a, gi)| *a += gi);
                }
            }
            Op::StatsPool(x) => {
                let s = self.shape(*x);
                let (d, t) = (s[0], s[1]);
                let xd = self.data(*x);
                let out = node.value.data();
                if let Some(gx) = self.acc(grads, *x) {
                    for r in 0..d {
                        let (mean, std) = (out[r], out[d + r]);
                        let (gm, gs) = (g[r], g[d + r]);
                        for k in 0..t {
                            let dev = xd[r * t + k] - mean;
                            gx[r * t + k] += gm / t as f64 + gs * dev / (t as f64 * std);
                        }
                    }
                }
            }
            Op::Cosine(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                let (ga, gb) = kernels::cosine_grad(ad, bd);
                if let Some(dst) = self.acc(grads, *a) {
                    dst.iter_mut().zip(&ga).for_each(|(x, v)| *x += g[0] * v);
                }
                if let Some(dst) = self.acc(grads, *b) {
                    dst.iter_mut().zip(&gb).for_each(|(x, v)| *x += g[0] * v);
                }
            }
            Op::SoftmaxXent {
                logits,
                label,
                probs,
            } => {
                if let Some(gl) = self.acc(grads, *logits) {
                    for (i, (a, p)) in gl.iter_mut().zip(probs).enumerate() {
                        let onehot = if i == *label { 1.0 } else { 0.0 };
                        *a += g[0] * (p - onehot);
                    }
                }
            }
            Op::Splice { x, w, b, offsets } => {
                let xs = self.shape(*x).to_vec();
                let d_out = self.shape(*w)[0];
                let need_x = self.nodes[x.0].needs_grad;
                let need_w = self.nodes[w.0].needs_grad;
                let (gx, gw) = kernels::splice_backward(
                    &xs,
                    self.data(*x),
                    d_out,
                    self.data(*w),
                    offsets,
                    g,
                    need_x,
                    need_w,
                );
                if let (Some(dst), Some(src)) = (self.acc(grads, *x), gx) {
                    dst.iter_mut().zip(&src).for_each(|(a, v)| *a += v);
                }
                if let (Some(dst), Some(src)) = (self.acc(grads, *w), gw) {
                    dst.iter_mut().zip(&src).for_each(|(a, v)| *a += v);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    let t_out = node.value.shape()[1];
                    for (o, a) in gb.iter_mut().enumerate() {
                        *a += g[o * t_out..(o + 1) * t_out].iter().sum::<f64>();
                    }
                }
            }
        }
    }
}

/// Adds `sign * g` into `dst`, summing over `g` when `dst` is a broadcast scalar.
fn reduce_into(dst: &mut [f64], g: &[f64], sign: f64) {
    if dst.len() == g.len() {
        dst.iter_mut().zip(g).for_each(|(a, gi)| *a += sign * gi);
    } else {
        dst[0] += sign * g.iter().sum::<f64>();
    }
}
