//! Define-by-run reverse-mode tape.
//!
//! Each operation executes eagerly when recorded and stores its output, so
//! the node list is in topological order by construction. `backward` walks
//! the list once in reverse. One tape serves one forward/backward pass;
//! independent tapes can run on different threads with no shared state.
//!
//! All values are 4-D tensors; vectors and scalars use (1,1,1,k) and
//! (1,1,1,1) shapes. Forward outputs are checked for non-finite values.

use crate::error::{AutodiffError, Result};
use crate::kernels::conv::{conv2d_backward, conv2d_forward, ConvGeom};
use crate::kernels::loss::{focal, smooth_l1};
use crate::kernels::norm::{group_norm_backward, group_norm_forward, GroupNormStats};
use crate::kernels::pool::{maxpool2_backward, maxpool2_forward};
use crate::kernels::resize::{upsample2x_backward, upsample2x_forward};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(pub(crate) usize);

enum Op<T: Scalar> {
    /// Constant input or trainable parameter; distinguished by requires_grad.
    Leaf,
    Conv2d { input: ValueId, kernel: ValueId, geom: ConvGeom },
    BiasAdd { input: ValueId, bias: ValueId },
    Relu { input: ValueId },
    Add { a: ValueId, b: ValueId },
    WeightedSum { inputs: Vec<ValueId>, weights: ValueId },
    ScaleByScalar { input: ValueId, scalar: ValueId },
    IndexVec { input: ValueId, index: usize },
    Upsample2x { input: ValueId },
    MaxPool2 { input: ValueId, argmax: Vec<u32> },
    SoftmaxT { input: ValueId, tau: f64 },
    StGumbelCombine { feat: ValueId, soft: ValueId, index: usize },
    GroupNorm { input: ValueId, gamma: ValueId, beta: ValueId, groups: usize, stats: GroupNormStats<T> },
    Sum { input: ValueId },
    FocalLoss { cls_maps: Vec<ValueId>, targets: Vec<u8>, alpha: f64, gamma: f64, inv_norm: f64 },
    SmoothL1 { reg_maps: Vec<ValueId>, targets: Vec<T>, pos: Vec<bool>, beta: f64, inv_norm: f64 },
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::BiasAdd { .. } => "bias_add",
            Op::Relu { .. } => "relu",
            Op::Add { .. } => "add",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::ScaleByScalar { .. } => "scale_by_scalar",
            Op::IndexVec { .. } => "index_vec",
            Op::Upsample2x { .. } => "upsample2x",
            Op::MaxPool2 { .. } => "maxpool2",
            Op::SoftmaxT { .. } => "softmax_t",
            Op::StGumbelCombine { .. } => "st_gumbel_combine",
            Op::GroupNorm { .. } => "group_norm",
            Op::Sum { .. } => "sum",
            Op::FocalLoss { .. } => "focal_loss",
            Op::SmoothL1 { .. } => "smooth_l1",
        }
    }
}

struct Node<T: Scalar> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), check_finite: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: ValueId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: ValueId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient of a leaf after `backward`. Intermediate gradients are
    /// released during the reverse sweep.
    pub fn grad(&self, id: ValueId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn input(&mut self, value: Tensor<T>) -> ValueId {
        self.push_unchecked(Op::Leaf, value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> ValueId {
        self.push_unchecked(Op::Leaf, value, true)
    }

    fn push_unchecked(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> ValueId {
        self.nodes.push(Node { op, value, requires_grad });
        self.grads.push(None);
        ValueId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Result<ValueId> {
        if self.check_finite && !value.all_finite() {
            return Err(AutodiffError::NonFinite { op: op.name(), node: self.nodes.len() });
        }
        Ok(self.push_unchecked(op, value, requires_grad))
    }

    // ── Forward operations ───────────────────────────────────────────

    /// Same-padded convolution; kernel is (out, in, kh, kw).
    pub fn conv2d(&mut self, input: ValueId, kernel: ValueId, stride: usize, dilation: usize) -> Result<ValueId> {
        let is = self.shape(input);
        let ks = self.shape(kernel);
        if ks.c != is.c {
            return Err(AutodiffError::ShapeMismatch {
                context: "conv2d",
                detail: format!("kernel expects {} input channels, input has {}", ks.c, is.c),
            });
        }
        if is.h == 0 || is.w == 0 {
            return Err(AutodiffError::InvalidArgument {
                context: "conv2d",
                detail: format!("zero-sized spatial dims {is}"),
            });
        }
        if stride == 0 || dilation == 0 {
            return Err(AutodiffError::InvalidArgument {
                context: "conv2d",
                detail: "stride and dilation must be >= 1".into(),
            });
        }
        let geom = ConvGeom::same(is.h, is.w, ks.h, ks.w, stride, dilation);
        let out = conv2d_forward(self.value(input), self.value(kernel), &geom);
        let rg = self.requires_grad(input) || self.requires_grad(kernel);
        self.push(Op::Conv2d { input, kernel, geom }, out, rg)
    }

    /// Adds a per-channel bias; bias is a flat vector of length C.
    pub fn bias_add(&mut self, input: ValueId, bias: ValueId) -> Result<ValueId> {
        let is = self.shape(input);
        let bs = self.shape(bias);
        if bs.numel() != is.c {
            return Err(AutodiffError::ShapeMismatch {
                context: "bias_add",
                detail: format!("bias has {} values for {} channels", bs.numel(), is.c),
            });
        }
        let plane = is.h * is.w;
        let mut out = self.value(input).clone();
        {
            let bias_v = self.nodes[bias.0].value.data().to_vec();
            let data = out.data_mut();
            for b in 0..is.b {
                for c in 0..is.c {
                    let start = (b * is.c + c) * plane;
                    let bv = bias_v[c];
                    for v in &mut data[start..start + plane] {
                        *v += bv;
                    }
                }
            }
        }
        let rg = self.requires_grad(input) || self.requires_grad(bias);
        self.push(Op::BiasAdd { input, bias }, out, rg)
    }

    pub fn relu(&mut self, input: ValueId) -> Result<ValueId> {
        let out = self.value(input).map(|v| v.maxs(T::ZERO));
        let rg = self.requires_grad(input);
        self.push(Op::Relu { input }, out, rg)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch {
                context: "add",
                detail: format!("{sa} vs {sb}"),
            });
        }
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o += v;
        }
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(Op::Add { a, b }, out, rg)
    }

    /// out = sum_i weights[i] * inputs[i]; weights is a flat vector with one
    /// entry per input. Gradients flow to both the inputs and the weights.
    pub fn weighted_sum(&mut self, inputs: &[ValueId], weights: ValueId) -> Result<ValueId> {
        if inputs.is_empty() {
            return Err(AutodiffError::InvalidArgument {
                context: "weighted_sum",
                detail: "empty input list".into(),
            });
        }
        let ws = self.shape(weights);
        if ws.numel() != inputs.len() {
            return Err(AutodiffError::ShapeMismatch {
                context: "weighted_sum",
                detail: format!("{} weights for {} inputs", ws.numel(), inputs.len()),
            });
        }
        let s0 = self.shape(inputs[0]);
        for &id in &inputs[1..] {
            if self.shape(id) != s0 {
                return Err(AutodiffError::ShapeMismatch {
                    context: "weighted_sum",
                    detail: format!("{} vs {}", self.shape(id), s0),
                });
            }
        }
        let mut out = Tensor::zeros(s0);
        for (i, &id) in inputs.iter().enumerate() {
            let w = self.nodes[weights.0].value.data()[i];
            for (o, &v) in out.data_mut().iter_mut().zip(self.nodes[id.0].value.data()) {
                *o += w * v;
            }
        }
        let rg = self.requires_grad(weights) || inputs.iter().any(|&id| self.requires_grad(id));
        self.push(Op::WeightedSum { inputs: inputs.to_vec(), weights }, out, rg)
    }

    /// out = scalar * input, where scalar is a one-element tensor.
    pub fn scale_by_scalar(&mut self, input: ValueId, scalar: ValueId) -> Result<ValueId> {
        if self.shape(scalar).numel() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                context: "scale_by_scalar",
                detail: format!("scalar must have one element, got {}", self.shape(scalar)),
            });
        }
        let s = self.nodes[scalar.0].value.item();
        let out = self.value(input).map(|v| v * s);
        let rg = self.requires_grad(input) || self.requires_grad(scalar);
        self.push(Op::ScaleByScalar { input, scalar }, out, rg)
    }

    /// Extracts element `index` of a flat vector as a scalar.
    pub fn index_vec(&mut self, input: ValueId, index: usize) -> Result<ValueId> {
        let n = self.shape(input).numel();
        if index >= n {
            return Err(AutodiffError::InvalidArgument {
                context: "index_vec",
                detail: format!("index {index} out of {n}"),
            });
        }
        let out = Tensor::scalar(self.nodes[input.0].value.data()[index]);
        let rg = self.requires_grad(input);
        self.push(Op::IndexVec { input, index }, out, rg)
    }

    pub fn upsample2x(&mut self, input: ValueId) -> Result<ValueId> {
        let s = self.shape(input);
        if s.h == 0 || s.w == 0 {
            return Err(AutodiffError::InvalidArgument {
                context: "upsample2x",
                detail: format!("zero-sized spatial dims {s}"),
            });
        }
        let out = upsample2x_forward(self.value(input));
        let rg = self.requires_grad(input);
        self.push(Op::Upsample2x { input }, out, rg)
    }

    pub fn maxpool2(&mut self, input: ValueId) -> Result<ValueId> {
        let s = self.shape(input);
        if s.h < 2 || s.w < 2 {
            return Err(AutodiffError::InvalidArgument {
                context: "maxpool2",
                detail: format!("spatial dims must be >= 2, got {s}"),
            });
        }
        let (out, argmax) = maxpool2_forward(self.value(input));
        let rg = self.requires_grad(input);
        self.push(Op::MaxPool2 { input, argmax }, out, rg)
    }

    /// Temperature softmax over the whole (flat) tensor:
    /// y_i = exp(x_i / tau) / sum_j exp(x_j / tau).
    pub fn softmax_t(&mut self, input: ValueId, tau: f64) -> Result<ValueId> {
        if tau <= 0.0 {
            return Err(AutodiffError::InvalidArgument {
                context: "softmax_t",
                detail: format!("temperature must be positive, got {tau}"),
            });
        }
        let x = self.value(input);
        let max = x.data().iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64()));
        let exps: Vec<f64> = x.data().iter().map(|v| ((v.to_f64() - max) / tau).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let out = Tensor::from_vec(x.shape(), exps.into_iter().map(|e| T::from_f64(e / denom)).collect())?;
        let rg = self.requires_grad(input);
        self.push(Op::SoftmaxT { input, tau }, out, rg)
    }

    /// Straight-through combination of a hard categorical choice with its
    /// softmax relaxation. The forward value is exactly `feat` (the branch
    /// picked by the hard one-hot at `index`); the backward pass treats the
    /// coefficients as the relaxed weights `soft`, so the choice logits keep
    /// receiving gradient.
    pub fn st_gumbel_combine(&mut self, feat: ValueId, soft: ValueId, index: usize) -> Result<ValueId> {
        let k = self.shape(soft).numel();
        if index >= k {
            return Err(AutodiffError::InvalidArgument {
                context: "st_gumbel_combine",
                detail: format!("hard index {index} out of {k}"),
            });
        }
        let out = self.value(feat).clone();
        let rg = self.requires_grad(feat) || self.requires_grad(soft);
        self.push(Op::StGumbelCombine { feat, soft, index }, out, rg)
    }

    pub fn group_norm(&mut self, input: ValueId, gamma: ValueId, beta: ValueId, groups: usize, eps: f64) -> Result<ValueId> {
        let s = self.shape(input);
        if groups == 0 || s.c % groups != 0 {
            return Err(AutodiffError::InvalidArgument {
                context: "group_norm",
                detail: format!("{} channels not divisible by {groups} groups", s.c),
            });
        }
        if self.shape(gamma).numel() != s.c || self.shape(beta).numel() != s.c {
            return Err(AutodiffError::ShapeMismatch {
                context: "group_norm",
                detail: "gamma/beta length must equal channel count".into(),
            });
        }
        let (out, stats) = group_norm_forward(self.value(input), self.value(gamma), self.value(beta), groups, eps);
        let rg = self.requires_grad(input) || self.requires_grad(gamma) || self.requires_grad(beta);
        self.push(Op::GroupNorm { input, gamma, beta, groups, stats }, out, rg)
    }

    /// Full reduction to a scalar.
    pub fn sum(&mut self, input: ValueId) -> Result<ValueId> {
        let total: T = self.value(input).data().iter().copied().sum();
        let rg = self.requires_grad(input);
        self.push(Op::Sum { input }, Tensor::scalar(total), rg)
    }

    /// Sigmoid focal loss summed over every anchor of every image, scaled by
    /// `inv_norm`. `cls_maps` hold one logit channel per level; targets are
    /// laid out image-major, then level, then row-major spatial — the same
    /// order the anchor generator uses.
    pub fn focal_loss(
        &mut self,
        cls_maps: &[ValueId],
        targets: &[u8],
        alpha: f64,
        gamma: f64,
        inv_norm: f64,
    ) -> Result<ValueId> {
        let batch = self.shape(cls_maps[0]).b;
        let mut per_image = 0usize;
        for &m in cls_maps {
            let s = self.shape(m);
            if s.c != 1 {
                return Err(AutodiffError::ShapeMismatch {
                    context: "focal_loss",
                    detail: format!("cls map must have 1 channel, got {s}"),
                });
            }
            per_image += s.h * s.w;
        }
        if targets.len() != batch * per_image {
            return Err(AutodiffError::ShapeMismatch {
                context: "focal_loss",
                detail: format!("{} targets for {} anchors", targets.len(), batch * per_image),
            });
        }
        let mut total = 0.0;
        for b in 0..batch {
            let mut offset = 0usize;
            for &m in cls_maps {
                let s = self.shape(m);
                let n = s.h * s.w;
                let logits = &self.nodes[m.0].value.data()[b * n..(b + 1) * n];
                let tgt = &targets[b * per_image + offset..b * per_image + offset + n];
                for (z, &t) in logits.iter().zip(tgt) {
                    total += focal(z.to_f64(), t != 0, alpha, gamma).0;
                }
                offset += n;
            }
        }
        let rg = cls_maps.iter().any(|&m| self.requires_grad(m));
        self.push(
            Op::FocalLoss { cls_maps: cls_maps.to_vec(), targets: targets.to_vec(), alpha, gamma, inv_norm },
            Tensor::scalar(T::from_f64(total * inv_norm)),
            rg,
        )
    }

    /// Smooth L1 over the 4 regression deltas of every positive anchor,
    /// scaled by `inv_norm`. Targets hold 4 consecutive values per anchor in
    /// the same anchor order as `focal_loss`.
    pub fn smooth_l1_loss(
        &mut self,
        reg_maps: &[ValueId],
        targets: &[T],
        pos: &[bool],
        beta: f64,
        inv_norm: f64,
    ) -> Result<ValueId> {
        let batch = self.shape(reg_maps[0]).b;
        let mut per_image = 0usize;
        for &m in reg_maps {
            let s = self.shape(m);
            if s.c != 4 {
                return Err(AutodiffError::ShapeMismatch {
                    context: "smooth_l1",
                    detail: format!("reg map must have 4 channels, got {s}"),
                });
            }
            per_image += s.h * s.w;
        }
        if pos.len() != batch * per_image || targets.len() != pos.len() * 4 {
            return Err(AutodiffError::ShapeMismatch {
                context: "smooth_l1",
                detail: "target/mask length mismatch with anchor count".into(),
            });
        }
        let mut total = 0.0;
        for b in 0..batch {
            let mut offset = 0usize;
            for &m in reg_maps {
                let s = self.shape(m);
                let n = s.h * s.w;
                let data = self.nodes[m.0].value.data();
                for j in 0..n {
                    let a = b * per_image + offset + j;
                    if !pos[a] {
                        continue;
                    }
                    for k in 0..4 {
                        let pred = data[((b * 4 + k) * n) + j].to_f64();
                        let r = pred - targets[a * 4 + k].to_f64();
                        total += smooth_l1(r, beta).0;
                    }
                }
                offset += n;
            }
        }
        let rg = reg_maps.iter().any(|&m| self.requires_grad(m));
        self.push(
            Op::SmoothL1 { reg_maps: reg_maps.to_vec(), targets: targets.to_vec(), pos: pos.to_vec(), beta, inv_norm },
            Tensor::scalar(T::from_f64(total * inv_norm)),
            rg,
        )
    }

    // ── Reverse pass ─────────────────────────────────────────────────

    /// Accumulates gradients for every leaf reachable from `loss`.
    /// Unreachable parameters simply keep no gradient entry (read as zero
    /// by the binder). Intermediate gradients are dropped as soon as their
    /// node has been processed.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(ls.to_string()));
        }
        if !self.value(loss).item().is_finite() {
            return Err(AutodiffError::NonFinite { op: "loss", node: loss.0 });
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(Tensor::scalar(T::ONE));

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                self.grads[i] = None;
                continue;
            }
            let Some(d_out) = self.grads[i].take() else { continue };
            if self.check_finite && !d_out.all_finite() {
                return Err(AutodiffError::NonFiniteGrad { op: self.nodes[i].op.name(), node: i });
            }
            let mut contributions: Vec<(ValueId, Tensor<T>)> = Vec::new();
            match &self.nodes[i].op {
                Op::Leaf => {
                    // Keep leaf gradients for the caller.
                    self.grads[i] = Some(d_out);
                    continue;
                }
                Op::Conv2d { input, kernel, geom } => {
                    let need_di = self.nodes[input.0].requires_grad;
                    let need_dk = self.nodes[kernel.0].requires_grad;
                    let (di, dk) = conv2d_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[kernel.0].value,
                        geom,
                        &d_out,
                        need_di,
                        need_dk,
                    );
                    if let Some(di) = di {
                        contributions.push((*input, di));
                    }
                    if let Some(dk) = dk {
                        contributions.push((*kernel, dk));
                    }
                }
                Op::BiasAdd { input, bias } => {
                    if self.nodes[bias.0].requires_grad {
                        let s = self.nodes[input.0].value.shape();
                        let plane = s.h * s.w;
                        let mut db = Tensor::zeros(self.nodes[bias.0].value.shape());
                        for b in 0..s.b {
                            for c in 0..s.c {
                                let start = (b * s.c + c) * plane;
                                let sum: T = d_out.data()[start..start + plane].iter().copied().sum();
                                db.data_mut()[c] += sum;
                            }
                        }
                        contributions.push((*bias, db));
                    }
                    if self.nodes[input.0].requires_grad {
                        contributions.push((*input, d_out));
                    }
                }
                Op::Relu { input } => {
                    let x = &self.nodes[input.0].value;
                    let mut di = d_out;
                    for (g, &v) in di.data_mut().iter_mut().zip(x.data()) {
                        if v <= T::ZERO {
                            *g = T::ZERO;
                        }
                    }
                    contributions.push((*input, di));
                }
                Op::Add { a, b } => {
                    if self.nodes[b.0].requires_grad {
                        contributions.push((*b, d_out.clone()));
                    }
                    if self.nodes[a.0].requires_grad {
                        contributions.push((*a, d_out));
                    }
                }
                Op::WeightedSum { inputs, weights } => {
                    let wv = self.nodes[weights.0].value.data().to_vec();
                    if self.nodes[weights.0].requires_grad {
                        let mut dw = Tensor::zeros(self.nodes[weights.0].value.shape());
                        for (k, &id) in inputs.iter().enumerate() {
                            let dot: T = d_out
                                .data()
                                .iter()
                                .zip(self.nodes[id.0].value.data())
                                .map(|(&g, &x)| g * x)
                                .sum();
                            dw.data_mut()[k] = dot;
                        }
                        contributions.push((*weights, dw));
                    }
                    for (k, &id) in inputs.iter().enumerate() {
                        if self.nodes[id.0].requires_grad {
                            let w = wv[k];
                            contributions.push((id, d_out.map(|g| g * w)));
                        }
                    }
                }
                Op::ScaleByScalar { input, scalar } => {
                    let s = self.nodes[scalar.0].value.item();
                    if self.nodes[scalar.0].requires_grad {
                        let dot: T = d_out
                            .data()
                            .iter()
                            .zip(self.nodes[input.0].value.data())
                            .map(|(&g, &x)| g * x)
                            .sum();
                        contributions.push((*scalar, Tensor::scalar(dot)));
                    }
                    if self.nodes[input.0].requires_grad {
                        contributions.push((*input, d_out.map(|g| g * s)));
                    }
                }
                Op::IndexVec { input, index } => {
                    let mut di = Tensor::zeros(self.nodes[input.0].value.shape());
                    di.data_mut()[*index] = d_out.item();
                    contributions.push((*input, di));
                }
                Op::Upsample2x { input } => {
                    let di = upsample2x_backward(self.nodes[input.0].value.shape(), &d_out);
                    contributions.push((*input, di));
                }
                Op::MaxPool2 { input, argmax } => {
                    let di = maxpool2_backward(self.nodes[input.0].value.shape(), argmax, &d_out);
                    contributions.push((*input, di));
                }
                Op::SoftmaxT { input, tau } => {
                    let y = &self.nodes[i].value;
                    let dot: f64 = d_out.data().iter().zip(y.data()).map(|(&g, &v)| g.to_f64() * v.to_f64()).sum();
                    let inv_tau = 1.0 / tau;
                    let mut di = Tensor::zeros(y.shape());
                    for ((d, &g), &v) in di.data_mut().iter_mut().zip(d_out.data()).zip(y.data()) {
                        *d = T::from_f64(v.to_f64() * (g.to_f64() - dot) * inv_tau);
                    }
                    contributions.push((*input, di));
                }
                Op::StGumbelCombine { feat, soft, index } => {
                    if self.nodes[soft.0].requires_grad {
                        // Straight-through: the selected coefficient sees the
                        // feature inner product, the others the plain sum of
                        // the upstream gradient.
                        let sum_g: T = d_out.data().iter().copied().sum();
                        let dot: T = d_out
                            .data()
                            .iter()
                            .zip(self.nodes[feat.0].value.data())
                            .map(|(&g, &x)| g * x)
                            .sum();
                        let mut ds = Tensor::full(self.nodes[soft.0].value.shape(), sum_g);
                        ds.data_mut()[*index] = dot;
                        contributions.push((*soft, ds));
                    }
                    if self.nodes[feat.0].requires_grad {
                        contributions.push((*feat, d_out));
                    }
                }
                Op::GroupNorm { input, gamma, beta, groups, stats } => {
                    let (di, dg, db) = group_norm_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[gamma.0].value,
                        stats,
                        *groups,
                        &d_out,
                    );
                    if self.nodes[beta.0].requires_grad {
                        contributions.push((*beta, db));
                    }
                    if self.nodes[gamma.0].requires_grad {
                        contributions.push((*gamma, dg));
                    }
                    if self.nodes[input.0].requires_grad {
                        contributions.push((*input, di));
                    }
                }
                Op::Sum { input } => {
                    let g = d_out.item();
                    contributions.push((*input, Tensor::full(self.nodes[input.0].value.shape(), g)));
                }
                Op::FocalLoss { cls_maps, targets, alpha, gamma, inv_norm } => {
                    let scale = d_out.item().to_f64() * inv_norm;
                    let batch = self.nodes[cls_maps[0].0].value.shape().b;
                    let per_image = targets.len() / batch;
                    let mut offset = 0usize;
                    for &m in cls_maps {
                        let s = self.nodes[m.0].value.shape();
                        let n = s.h * s.w;
                        let mut dm = Tensor::zeros(s);
                        for b in 0..batch {
                            let logits = &self.nodes[m.0].value.data()[b * n..(b + 1) * n];
                            let tgt = &targets[b * per_image + offset..b * per_image + offset + n];
                            let dst = &mut dm.data_mut()[b * n..(b + 1) * n];
                            for ((d, z), &t) in dst.iter_mut().zip(logits).zip(tgt) {
                                let (_, g) = focal(z.to_f64(), t != 0, *alpha, *gamma);
                                *d = T::from_f64(g * scale);
                            }
                        }
                        if self.nodes[m.0].requires_grad {
                            contributions.push((m, dm));
                        }
                        offset += n;
                    }
                }
                Op::SmoothL1 { reg_maps, targets, pos, beta, inv_norm } => {
                    let scale = d_out.item().to_f64() * inv_norm;
                    let batch = self.nodes[reg_maps[0].0].value.shape().b;
                    let per_image = pos.len() / batch;
                    let mut offset = 0usize;
                    for &m in reg_maps {
                        let s = self.nodes[m.0].value.shape();
                        let n = s.h * s.w;
                        let mut dm = Tensor::zeros(s);
                        for b in 0..batch {
                            let data = self.nodes[m.0].value.data();
                            for j in 0..n {
                                let a = b * per_image + offset + j;
                                if !pos[a] {
                                    continue;
                                }
                                for k in 0..4 {
                                    let idx = (b * 4 + k) * n + j;
                                    let r = data[idx].to_f64() - targets[a * 4 + k].to_f64();
                                    let (_, g) = smooth_l1(r, *beta);
                                    dm.data_mut()[idx] = T::from_f64(g * scale);
                                }
                            }
                        }
                        if self.nodes[m.0].requires_grad {
                            contributions.push((m, dm));
                        }
                        offset += n;
                    }
                }
            }
            for (id, grad) in contributions {
                self.accumulate(id, grad);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: ValueId, grad: Tensor<T>) {
        match &mut self.grads[id.0] {
            Some(existing) => {
                for (e, v) in existing.data_mut().iter_mut().zip(grad.data()) {
                    *e += *v;
                }
            }
            slot => *slot = Some(grad),
        }
    }
}
