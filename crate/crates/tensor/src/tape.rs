//! Reverse-mode differentiation over a flat tape of recorded operations.
//!
//! Every operation appends a node holding its output value plus whatever it
//! needs for the backward pass. [`Tape::backward`] walks the nodes in reverse
//! and accumulates gradients for every node that depends on a leaf created
//! with `requires_grad`.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gemm::{gemm, Layout};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Spatial padding of a stride-1 convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// No padding: output extent is `input - kernel + 1`.
    Valid,
    /// Wrap-around padding of `kernel / 2` on each side; output extent equals
    /// input extent. Kernel extents must be odd.
    Circular,
}

/// Statistics source for a batch-norm node.
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'s> {
    /// Normalize by the batch's own per-channel mean and (biased) variance.
    Train { eps: f64 },
    /// Normalize by stored running statistics.
    Eval {
        running_mean: &'s [f64],
        running_var: &'s [f64],
        eps: f64,
    },
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    BatchNorm2d {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
        train: bool,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Reshape {
        x: Var,
    },
    DuelingAggregate {
        value: Var,
        advantage: Var,
    },
    Gather {
        q: Var,
        actions: Vec<usize>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    Huber {
        pred: Var,
        target: Vec<f64>,
        delta: f64,
    },
    WeightedSum {
        x: Var,
        weights: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    pad_h: usize,
    pad_w: usize,
    circular: bool,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn n(&self) -> usize {
        self.batch * self.p()
    }

    /// Input row for output row `oy` and kernel row `i`.
    #[inline]
    fn src_row(&self, oy: usize, i: usize) -> usize {
        if self.circular {
            (oy + i + self.h - self.pad_h) % self.h
        } else {
            oy + i
        }
    }

    #[inline]
    fn src_col(&self, ox: usize, j: usize) -> usize {
        if self.circular {
            (ox + j + self.w - self.pad_w) % self.w
        } else {
            ox + j
        }
    }
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
///
/// Leaves may borrow parameter tensors for the tape's lifetime, so building a
/// graph never copies weights.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Owned leaf.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that does not take part in differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Borrowed leaf, typically a network parameter.
    pub fn borrowed(&mut self, value: &'a Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Batch mean and biased variance recorded by a training-mode batch-norm node.
    pub fn batch_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm2d {
                batch_mean,
                batch_var,
                train: true,
                ..
            } => Some((batch_mean, batch_var)),
            _ => None,
        }
    }

    /// Per-node signs of every leaky-ReLU input, in recording order.
    ///
    /// Finite-difference checks compare this pattern before and after a
    /// perturbation to detect kink crossings.
    pub fn leaky_relu_signs(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::LeakyRelu { x, .. } = node.op {
                out.extend(self.nodes[x.0].value.data().iter().map(|&v| v >= 0.0));
            }
        }
        out
    }

    /// Smallest |input| seen by any leaky-ReLU node.
    pub fn leaky_relu_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        for node in &self.nodes {
            if let Op::LeakyRelu { x, .. } = node.op {
                for &v in self.nodes[x.0].value.data() {
                    m = m.min(v.abs());
                }
            }
        }
        m
    }

    /// Stride-1 2-D cross-correlation of `x (B,Cin,H,W)` with `w (Cout,Cin,kh,kw)` plus bias `b (Cout)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, padding: Padding) -> Result<Var> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        let bs = self.value(b).shape();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(shape_err(format!("conv2d: input {xs:?}, weight {ws:?}")));
        }
        let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if wcin != cin {
            return Err(shape_err(format!(
                "conv2d: input has {cin} channels, weight expects {wcin}"
            )));
        }
        if bs != [cout] {
            return Err(shape_err(format!("conv2d: bias {bs:?}, expected [{cout}]")));
        }
        let geom = match padding {
            Padding::Valid => {
                if kh > h || kw > wd {
                    return Err(shape_err(format!(
                        "conv2d: kernel ({kh},{kw}) larger than input ({h},{wd})"
                    )));
                }
                ConvGeom {
                    batch,
                    cin,
                    h,
                    w: wd,
                    cout,
                    kh,
                    kw,
                    ho: h - kh + 1,
                    wo: wd - kw + 1,
                    pad_h: 0,
                    pad_w: 0,
                    circular: false,
                }
            }
            Padding::Circular => {
                if kh % 2 == 0 || kw % 2 == 0 || kh > h || kw > wd {
                    return Err(shape_err(format!(
                        "conv2d: circular padding needs odd kernel no larger than input, got ({kh},{kw})"
                    )));
                }
                ConvGeom {
                    batch,
                    cin,
                    h,
                    w: wd,
                    cout,
                    kh,
                    kw,
                    ho: h,
                    wo: wd,
                    pad_h: kh / 2,
                    pad_w: kw / 2,
                    circular: true,
                }
            }
        };

        let (k, p, n) = (geom.k(), geom.p(), geom.n());
        let xd = self.value(x).data();
        let mut cols = vec![0.0; k * n];
        for c in 0..cin {
            for i in 0..kh {
                for j in 0..kw {
                    let row = (c * kh + i) * kw + j;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for bi in 0..batch {
                        let xb = &xd[(bi * cin + c) * h * wd..(bi * cin + c + 1) * h * wd];
                        for oy in 0..geom.ho {
                            let sy = geom.src_row(oy, i);
                            let out = &mut dst[bi * p + oy * geom.wo..bi * p + (oy + 1) * geom.wo];
                            for (ox, o) in out.iter_mut().enumerate() {
                                *o = xb[sy * wd + geom.src_col(ox, j)];
                            }
                        }
                    }
                }
            }
        }

        let mut tmp = vec![0.0; cout * n];
        gemm(
            cout,
            k,
            n,
            self.value(w).data(),
            Layout::row_major(k),
            &cols,
            Layout::row_major(n),
            0.0,
            &mut tmp,
        );
        let bias = self.value(b).data();
        let mut out = vec![0.0; batch * cout * p];
        for co in 0..cout {
            for bi in 0..batch {
                let src = &tmp[co * n + bi * p..co * n + (bi + 1) * p];
                let dst = &mut out[(bi * cout + co) * p..(bi * cout + co + 1) * p];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias[co];
                }
            }
        }
        let value = Tensor::new(&[batch, cout, geom.ho, geom.wo], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// Per-channel batch normalization of `x (B,C,H,W)` followed by the affine map `gamma·x̂ + beta`.
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(shape_err(format!("batch_norm2d: input {xs:?}")));
        }
        let (batch, ch, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        if self.value(gamma).shape() != [ch] || self.value(beta).shape() != [ch] {
            return Err(shape_err(format!(
                "batch_norm2d: affine parameters must have shape [{ch}]"
            )));
        }
        let xd = self.value(x).data();
        let count = (batch * plane) as f64;
        let (mean, var, eps, train) = match mode {
            BatchNormMode::Train { eps } => {
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for c in 0..ch {
                    let mut s = 0.0;
                    for bi in 0..batch {
                        let off = (bi * ch + c) * plane;
                        s += xd[off..off + plane].iter().sum::<f64>();
                    }
                    let m = s / count;
                    let mut sq = 0.0;
                    for bi in 0..batch {
                        let off = (bi * ch + c) * plane;
                        sq += xd[off..off + plane]
                            .iter()
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>();
                    }
                    mean[c] = m;
                    var[c] = sq / count;
                }
                (mean, var, eps, true)
            }
            BatchNormMode::Eval {
                running_mean,
                running_var,
                eps,
            } => {
                if running_mean.len() != ch || running_var.len() != ch {
                    return Err(shape_err("batch_norm2d: running statistics length"));
                }
                (running_mean.to_vec(), running_var.to_vec(), eps, false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for bi in 0..batch {
            for c in 0..ch {
                let off = (bi * ch + c) * plane;
                for idx in off..off + plane {
                    let h = (xd[idx] - mean[c]) * inv_std[c];
                    xhat[idx] = h;
                    out[idx] = g[c] * h + bt[c];
                }
            }
        }
        let value = Tensor::new(&xs, out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            value,
            Op::BatchNorm2d {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                train,
            },
            rg,
        ))
    }

    /// Elementwise `max(x, slope·x)` for `0 ≤ slope ≤ 1`.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let src = self.value(x);
        let data = src
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::new(src.shape(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::LeakyRelu { x, slope }, rg)
    }

    /// Affine map `x·wᵀ + b` for `x (B,F)`, `w (O,F)`, `b (O)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err(format!("linear: input {xs:?}, weight {ws:?}")));
        }
        let (batch, feat, outf) = (xs[0], xs[1], ws[0]);
        if self.value(b).shape() != [outf] {
            return Err(shape_err(format!(
                "linear: bias {:?}, expected [{outf}]",
                self.value(b).shape()
            )));
        }
        let mut out = vec![0.0; batch * outf];
        let bias = self.value(b).data();
        for r in 0..batch {
            out[r * outf..(r + 1) * outf].copy_from_slice(bias);
        }
        gemm(
            batch,
            feat,
            outf,
            self.value(x).data(),
            Layout::row_major(feat),
            self.value(w).data(),
            Layout::transposed(feat),
            1.0,
            &mut out,
        );
        let value = Tensor::new(&[batch, outf], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    /// Collapses every axis but the first.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape();
        if s.is_empty() {
            return Err(shape_err("flatten: rank-0 input"));
        }
        let batch = s[0];
        let rest: usize = s[1..].iter().product();
        self.reshape(x, &[batch, rest])
    }

    /// `Q = V + (A − mean_a A)` for `value (B,1)` and `advantage (B,A)`.
    pub fn dueling_aggregate(&mut self, value: Var, advantage: Var) -> Result<Var> {
        let vs = self.value(value).shape();
        let as_ = self.value(advantage).shape();
        if vs.len() != 2 || as_.len() != 2 || vs[1] != 1 || vs[0] != as_[0] || as_[1] == 0 {
            return Err(shape_err(format!(
                "dueling_aggregate: value {vs:?}, advantage {as_:?}"
            )));
        }
        let (batch, na) = (as_[0], as_[1]);
        let v = self.value(value).data();
        let a = self.value(advantage).data();
        let mut out = vec![0.0; batch * na];
        for r in 0..batch {
            let row = &a[r * na..(r + 1) * na];
            let mean = row.iter().sum::<f64>() / na as f64;
            for (j, o) in out[r * na..(r + 1) * na].iter_mut().enumerate() {
                *o = v[r] + (row[j] - mean);
            }
        }
        let t = Tensor::new(&[batch, na], out)?;
        let rg = self.rg(value) || self.rg(advantage);
        Ok(self.push(t, Op::DuelingAggregate { value, advantage }, rg))
    }

    /// Picks `q[r, actions[r]]` for every row of `q (B,A)`.
    pub fn gather(&mut self, q: Var, actions: &[usize]) -> Result<Var> {
        let qs = self.value(q).shape();
        if qs.len() != 2 || qs[0] != actions.len() {
            return Err(shape_err(format!(
                "gather: q {qs:?} with {} actions",
                actions.len()
            )));
        }
        let na = qs[1];
        if let Some(&bad) = actions.iter().find(|&&a| a >= na) {
            return Err(shape_err(format!("gather: action {bad} out of range {na}")));
        }
        let qd = self.value(q).data();
        let data = actions
            .iter()
            .enumerate()
            .map(|(r, &a)| qd[r * na + a])
            .collect();
        let t = Tensor::new(&[actions.len()], data)?;
        let rg = self.rg(q);
        Ok(self.push(
            t,
            Op::Gather {
                q,
                actions: actions.to_vec(),
            },
            rg,
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse_loss(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() || p.is_empty() {
            return Err(shape_err(format!(
                "mse_loss: {} predictions, {} targets",
                p.len(),
                target.len()
            )));
        }
        let n = p.len() as f64;
        let loss = p
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    /// Mean Huber (smooth-L1) loss against a constant target.
    pub fn huber_loss(&mut self, pred: Var, target: &[f64], delta: f64) -> Result<Var> {
        if !(delta > 0.0) {
            return Err(Error::Config(format!("huber delta must be > 0, got {delta}")));
        }
        let p = self.value(pred).data();
        if p.len() != target.len() || p.is_empty() {
            return Err(shape_err(format!(
                "huber_loss: {} predictions, {} targets",
                p.len(),
                target.len()
            )));
        }
        let n = p.len() as f64;
        let loss = p
            .iter()
            .zip(target)
            .map(|(a, b)| huber(a - b, delta))
            .sum::<f64>()
            / n;
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Huber {
                pred,
                target: target.to_vec(),
                delta,
            },
            rg,
        ))
    }

    /// `Σ weights_i · x_i`; reduces any tensor to a scalar for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let xd = self.value(x).data();
        if xd.len() != weights.len() {
            return Err(shape_err("weighted_sum: length mismatch"));
        }
        let s = xd.iter().zip(weights).map(|(a, b)| a * b).sum();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(format!(
                "backward from non-scalar {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    geom,
                    cols,
                } => self.conv2d_backward(&mut grads, &g, *x, *w, *b, geom, cols),
                Op::BatchNorm2d {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                    ..
                } => self.bn_backward(&mut grads, &g, *x, *gamma, *beta, xhat, inv_std, *train),
                Op::LeakyRelu { x, slope } => {
                    if self.rg(*x) {
                        let xd = self.value(*x).data();
                        let data = g
                            .data()
                            .iter()
                            .zip(xd)
                            .map(|(&gv, &xv)| if xv >= 0.0 { gv } else { slope * gv })
                            .collect();
                        accumulate(&mut grads, *x, Tensor::new(g.shape(), data)?);
                    }
                }
                Op::Linear { x, w, b } => self.linear_backward(&mut grads, &g, *x, *w, *b),
                Op::Reshape { x } => {
                    if self.rg(*x) {
                        let shaped = g.reshape(self.value(*x).shape())?;
                        accumulate(&mut grads, *x, shaped);
                    }
                }
                Op::DuelingAggregate { value, advantage } => {
                    let s = self.value(*advantage).shape();
                    let (batch, na) = (s[0], s[1]);
                    let gd = g.data();
                    let mut gv = vec![0.0; batch];
                    let mut ga = vec![0.0; batch * na];
                    for r in 0..batch {
                        let row = &gd[r * na..(r + 1) * na];
                        let total: f64 = row.iter().sum();
                        gv[r] = total;
                        let mean = total / na as f64;
                        for j in 0..na {
                            ga[r * na + j] = row[j] - mean;
                        }
                    }
                    if self.rg(*value) {
                        accumulate(&mut grads, *value, Tensor::new(&[batch, 1], gv)?);
                    }
                    if self.rg(*advantage) {
                        accumulate(&mut grads, *advantage, Tensor::new(&[batch, na], ga)?);
                    }
                }
                Op::Gather { q, actions } => {
                    if self.rg(*q) {
                        let s = self.value(*q).shape();
                        let mut gq = Tensor::zeros(s);
                        let na = s[1];
                        for (r, &a) in actions.iter().enumerate() {
                            gq.data_mut()[r * na + a] += g.data()[r];
                        }
                        accumulate(&mut grads, *q, gq);
                    }
                }
                Op::Mse { pred, target } => {
                    if self.rg(*pred) {
                        let p = self.value(*pred);
                        let scale = 2.0 * g.item() / p.len() as f64;
                        let data = p
                            .data()
                            .iter()
                            .zip(target)
                            .map(|(a, b)| scale * (a - b))
                            .collect();
                        accumulate(&mut grads, *pred, Tensor::new(p.shape(), data)?);
                    }
                }
                Op::Huber {
                    pred,
                    target,
                    delta,
                } => {
                    if self.rg(*pred) {
                        let p = self.value(*pred);
                        let scale = g.item() / p.len() as f64;
                        let data = p
                            .data()
                            .iter()
                            .zip(target)
                            .map(|(a, b)| scale * huber_grad(a - b, *delta))
                            .collect();
                        accumulate(&mut grads, *pred, Tensor::new(p.shape(), data)?);
                    }
                }
                Op::WeightedSum { x, weights } => {
                    if self.rg(*x) {
                        let s = g.item();
                        let data = weights.iter().map(|w| w * s).collect();
                        accumulate(&mut grads, *x, Tensor::new(self.value(*x).shape(), data)?);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        grads: &mut [Option<Tensor>],
        g: &Tensor,
        x: Var,
        w: Var,
        b: Var,
        geom: &ConvGeom,
        cols: &[f64],
    ) {
        let (k, p, n) = (geom.k(), geom.p(), geom.n());
        let (batch, cout) = (geom.batch, geom.cout);
        let gd = g.data();
        let mut gtmp = vec![0.0; cout * n];
        for co in 0..cout {
            for bi in 0..batch {
                gtmp[co * n + bi * p..co * n + (bi + 1) * p]
                    .copy_from_slice(&gd[(bi * cout + co) * p..(bi * cout + co + 1) * p]);
            }
        }
        if self.rg(b) {
            let gb: Vec<f64> = (0..cout)
                .map(|co| gtmp[co * n..(co + 1) * n].iter().sum())
                .collect();
            accumulate(grads, b, Tensor::new(&[cout], gb).expect("bias shape"));
        }
        if self.rg(w) {
            let mut gw = vec![0.0; cout * k];
            gemm(
                cout,
                n,
                k,
                &gtmp,
                Layout::row_major(n),
                cols,
                Layout::transposed(n),
                0.0,
                &mut gw,
            );
            accumulate(
                grads,
                w,
                Tensor::new(self.value(w).shape(), gw).expect("weight shape"),
            );
        }
        if self.rg(x) {
            let mut gcols = vec![0.0; k * n];
            gemm(
                k,
                cout,
                n,
                self.value(w).data(),
                Layout::transposed(k),
                &gtmp,
                Layout::row_major(n),
                0.0,
                &mut gcols,
            );
            let (cin, h, wd, kh, kw) = (geom.cin, geom.h, geom.w, geom.kh, geom.kw);
            let mut gx = vec![0.0; batch * cin * h * wd];
            for c in 0..cin {
                for i in 0..kh {
                    for j in 0..kw {
                        let row = (c * kh + i) * kw + j;
                        let src = &gcols[row * n..(row + 1) * n];
                        for bi in 0..batch {
                            let base = (bi * cin + c) * h * wd;
                            for oy in 0..geom.ho {
                                let sy = geom.src_row(oy, i);
                                for ox in 0..geom.wo {
                                    gx[base + sy * wd + geom.src_col(ox, j)] +=
                                        src[bi * p + oy * geom.wo + ox];
                                }
                            }
                        }
                    }
                }
            }
            accumulate(
                grads,
                x,
                Tensor::new(self.value(x).shape(), gx).expect("input shape"),
            );
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_backward(
        &self,
        grads: &mut [Option<Tensor>],
        g: &Tensor,
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: &[f64],
        inv_std: &[f64],
        train: bool,
    ) {
        let shape = self.value(x).shape();
        let (batch, ch, plane) = (shape[0], shape[1], shape[2] * shape[3]);
        let count = (batch * plane) as f64;
        let gd = g.data();
        let gam = self.value(gamma).data();
        let mut sum_g = vec![0.0; ch];
        let mut sum_gx = vec![0.0; ch];
        for bi in 0..batch {
            for c in 0..ch {
                let off = (bi * ch + c) * plane;
                for idx in off..off + plane {
                    sum_g[c] += gd[idx];
                    sum_gx[c] += gd[idx] * xhat[idx];
                }
            }
        }
        if self.rg(gamma) {
            accumulate(grads, gamma, Tensor::new(&[ch], sum_gx.clone()).expect("ch"));
        }
        if self.rg(beta) {
            accumulate(grads, beta, Tensor::new(&[ch], sum_g.clone()).expect("ch"));
        }
        if self.rg(x) {
            let mut gx = vec![0.0; gd.len()];
            for bi in 0..batch {
                for c in 0..ch {
                    let off = (bi * ch + c) * plane;
                    let s = gam[c] * inv_std[c];
                    if train {
                        let mg = sum_g[c] / count;
                        let mgx = sum_gx[c] / count;
                        for idx in off..off + plane {
                            gx[idx] = s * (gd[idx] - mg - xhat[idx] * mgx);
                        }
                    } else {
                        for idx in off..off + plane {
                            gx[idx] = s * gd[idx];
                        }
                    }
                }
            }
            accumulate(grads, x, Tensor::new(shape, gx).expect("input shape"));
        }
    }

    fn linear_backward(&self, grads: &mut [Option<Tensor>], g: &Tensor, x: Var, w: Var, b: Var) {
        let xs = self.value(x).shape();
        let (batch, feat) = (xs[0], xs[1]);
        let outf = self.value(w).shape()[0];
        let gd = g.data();
        if self.rg(b) {
            let mut gb = vec![0.0; outf];
            for r in 0..batch {
                for (o, v) in gb.iter_mut().enumerate() {
                    *v += gd[r * outf + o];
                }
            }
            accumulate(grads, b, Tensor::new(&[outf], gb).expect("bias"));
        }
        if self.rg(w) {
            let mut gw = vec![0.0; outf * feat];
            gemm(
                outf,
                batch,
                feat,
                gd,
                Layout::transposed(outf),
                self.value(x).data(),
                Layout::row_major(feat),
                0.0,
                &mut gw,
            );
            accumulate(grads, w, Tensor::new(&[outf, feat], gw).expect("weight"));
        }
        if self.rg(x) {
            let mut gx = vec![0.0; batch * feat];
            gemm(
                batch,
                outf,
                feat,
                gd,
                Layout::row_major(outf),
                self.value(w).data(),
                Layout::row_major(feat),
                0.0,
                &mut gx,
            );
            accumulate(grads, x, Tensor::new(&[batch, feat], gx).expect("input"));
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Huber loss of a single residual.
pub fn huber(x: f64, delta: f64) -> f64 {
    let a = x.abs();
    if a <= delta {
        0.5 * x * x
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber`] with respect to the residual.
pub fn huber_grad(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        x
    } else {
        delta * x.signum()
    }
}
