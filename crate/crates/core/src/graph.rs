//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] records every operation in execution order, so node ids are
//! already a topological order. [`Graph::backward`] walks the tape once in
//! reverse, leaves the gradients on the leaf tensors and frees every
//! intermediate value. A graph can be differentiated exactly once.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
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
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        batch: usize,
    },
    // `geom` describes the conv2d this op is the adjoint of: its "input" is our
    // output and its "output" is our input.
    ConvTranspose2d {
        input: Var,
        weight: Var,
        geom: ConvGeom,
        batch: usize,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    ScalarMul {
        input: Var,
        factor: f64,
    },
    WeightedSum {
        inputs: Vec<Var>,
        weights: Var,
    },
    Mask {
        input: Var,
        mask: Vec<f64>,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Crop {
        input: Var,
        top: usize,
        left: usize,
    },
    Sum {
        input: Var,
    },
    HalfSquaredError {
        pred: Var,
        target: Vec<f64>,
        mask: Option<Vec<f64>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation tape. Confined to a single thread while recording.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
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

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Records `tensor` as a leaf; it receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Result<Var> {
        let requires_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, requires_grad)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Result<Var> {
        self.push(tensor.with_requires_grad(false), Op::Leaf, false)
    }

    /// Records a leaf that always receives a gradient.
    pub fn param(&mut self, tensor: Tensor) -> Result<Var> {
        self.push(tensor.with_requires_grad(true), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated on a leaf by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|n| n.value.grad())
    }

    /// Moves the gradient out of a leaf.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes.get_mut(v.0).and_then(|n| n.value.take_grad())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rank4(&self, op: &'static str, v: Var) -> Result<[usize; 4]> {
        let s = self.value(v).shape();
        if s.len() != 4 {
            return Err(Error::shape(op, "rank", format!("expected N,C,H,W, got {s:?}")));
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    /// Cross-correlation of `input[N,C,H,W]` with `weight[F,C,kH,kW]`, plus optional `bias[F]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        const OP: &str = "conv2d";
        let [n, c, h, w] = self.rank4(OP, input)?;
        let [f, wc, kh, kw] = self.rank4(OP, weight)?;
        if wc != c {
            return Err(Error::shape(
                OP,
                "input channels",
                format!("input has {c}, weight expects {wc}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(OP, "kernel size", format!("{kh}x{kw} must be odd")));
        }
        if stride == 0 {
            return Err(Error::invalid(OP, "stride must be positive"));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [f] {
                return Err(Error::shape(
                    OP,
                    "bias",
                    format!("expected [{f}], got {:?}", self.value(b).shape()),
                ));
            }
        }
        let oh = out_extent(OP, "height", h, kh, stride, padding)?;
        let ow = out_extent(OP, "width", w, kw, stride, padding)?;
        let geom = ConvGeom {
            c_in: c,
            h,
            w,
            c_out: f,
            kh,
            kw,
            stride,
            pad: padding,
            oh,
            ow,
        };
        let mut out = vec![0.0; n * geom.out_len()];
        {
            let x = self.value(input).data();
            let wt = self.value(weight).data();
            let bias_data = bias.map(|b| self.value(b).data());
            for (b, out_b) in out.chunks_exact_mut(geom.out_len()).enumerate() {
                if let Some(bd) = bias_data {
                    for (plane, &bv) in out_b.chunks_exact_mut(oh * ow).zip(bd) {
                        plane.fill(bv);
                    }
                }
                kernels::conv_forward(
                    &geom,
                    &x[b * geom.in_len()..(b + 1) * geom.in_len()],
                    wt,
                    out_b,
                );
            }
        }
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        let value = Tensor::new(&[n, f, oh, ow], out)?;
        self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                batch: n,
            },
            rg,
        )
    }

    /// Transposed convolution of `input[N,C,H,W]` with `weight[C,F,kH,kW]`:
    /// the adjoint of `conv2d` with the same weight, stride and padding.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let [n, c, h, w] = self.rank4(OP, input)?;
        let [wc, f, kh, kw] = self.rank4(OP, weight)?;
        if wc != c {
            return Err(Error::shape(
                OP,
                "input channels",
                format!("input has {c}, weight expects {wc}"),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid(OP, "stride must be positive"));
        }
        let oh = ((h as isize - 1) * stride as isize) - 2 * padding as isize + kh as isize;
        let ow = ((w as isize - 1) * stride as isize) - 2 * padding as isize + kw as isize;
        if oh <= 0 || ow <= 0 {
            return Err(Error::shape(
                OP,
                "output size",
                format!("non-positive output {oh}x{ow}"),
            ));
        }
        let (oh, ow) = (oh as usize, ow as usize);
        let geom = ConvGeom {
            c_in: f,
            h: oh,
            w: ow,
            c_out: c,
            kh,
            kw,
            stride,
            pad: padding,
            oh: h,
            ow: w,
        };
        let mut out = vec![0.0; n * geom.in_len()];
        {
            let x = self.value(input).data();
            let wt = self.value(weight).data();
            for (b, out_b) in out.chunks_exact_mut(geom.in_len()).enumerate() {
                kernels::conv_backward_input(
                    &geom,
                    &x[b * geom.out_len()..(b + 1) * geom.out_len()],
                    wt,
                    out_b,
                );
            }
        }
        let rg = self.rg(input) || self.rg(weight);
        let value = Tensor::new(&[n, f, oh, ow], out)?;
        self.push(
            value,
            Op::ConvTranspose2d {
                input,
                weight,
                geom,
                batch: n,
            },
            rg,
        )
    }

    /// Max pooling over the trailing two dims.
    pub fn max_pool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        const OP: &str = "max_pool2d";
        let t = self.value(input);
        let (h, w) = t
            .spatial()
            .ok_or_else(|| Error::shape(OP, "rank", "need at least 2 dims"))?;
        if window == 0 || stride == 0 {
            return Err(Error::invalid(OP, "window and stride must be positive"));
        }
        if h < window || w < window {
            return Err(Error::shape(
                OP,
                "spatial size",
                format!("{h}x{w} smaller than window {window}"),
            ));
        }
        let planes = t.planes();
        let oh = (h - window) / stride + 1;
        let ow = (w - window) / stride + 1;
        let mut out = vec![0.0; planes * oh * ow];
        let mut argmax = vec![0usize; planes * oh * ow];
        kernels::max_pool_forward(planes, h, w, window, stride, t.data(), &mut out, &mut argmax);
        let mut shape = t.shape().to_vec();
        let r = shape.len();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        let rg = self.rg(input);
        let value = Tensor::new(&shape, out)?;
        self.push(value, Op::MaxPool2d { input, argmax }, rg)
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        let data = t.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor::new(t.shape(), data)?;
        let rg = self.rg(input);
        self.push(value, Op::Relu { input }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add { a, b }, rg)
    }

    pub fn scalar_mul(&mut self, input: Var, factor: f64) -> Result<Var> {
        let t = self.value(input);
        let data = t.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(t.shape(), data)?;
        let rg = self.rg(input);
        self.push(value, Op::ScalarMul { input, factor }, rg)
    }

    /// `Σ_j weights[j] · inputs[j]`, differentiable in both the maps and the weights.
    pub fn weighted_sum(&mut self, inputs: &[Var], weights: Var) -> Result<Var> {
        const OP: &str = "weighted_sum";
        if inputs.is_empty() {
            return Err(Error::invalid(OP, "needs at least one input"));
        }
        let wt = self.value(weights);
        if wt.shape() != [inputs.len()] {
            return Err(Error::shape(
                OP,
                "weights",
                format!("expected [{}], got {:?}", inputs.len(), wt.shape()),
            ));
        }
        let first = self.value(inputs[0]);
        let mut out = vec![0.0; first.numel()];
        for (&v, &wj) in inputs.iter().zip(wt.data()) {
            let t = self.value(v);
            same_shape(OP, first, t)?;
            for (o, x) in out.iter_mut().zip(t.data()) {
                *o += wj * x;
            }
        }
        let value = Tensor::new(first.shape(), out)?;
        let rg = self.rg(weights) || inputs.iter().any(|&v| self.rg(v));
        self.push(
            value,
            Op::WeightedSum {
                inputs: inputs.to_vec(),
                weights,
            },
            rg,
        )
    }

    /// Multiplies every H×W plane of `input` by the constant `mask` (length H·W).
    pub fn mask(&mut self, input: Var, mask: &[f64]) -> Result<Var> {
        const OP: &str = "mask";
        let t = self.value(input);
        let (h, w) = t
            .spatial()
            .ok_or_else(|| Error::shape(OP, "rank", "need at least 2 dims"))?;
        if mask.len() != h * w {
            return Err(Error::shape(
                OP,
                "spatial size",
                format!("mask has {} pixels, input plane has {h}x{w}", mask.len()),
            ));
        }
        let mut data = t.data().to_vec();
        for plane in data.chunks_exact_mut(h * w) {
            for (v, m) in plane.iter_mut().zip(mask) {
                *v *= m;
            }
        }
        let value = Tensor::new(t.shape(), data)?;
        let rg = self.rg(input);
        self.push(
            value,
            Op::Mask {
                input,
                mask: mask.to_vec(),
            },
            rg,
        )
    }

    /// Concatenates rank-4 tensors along the channel dimension.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        if inputs.is_empty() {
            return Err(Error::invalid(OP, "needs at least one input"));
        }
        let [n, _, h, w] = self.rank4(OP, inputs[0])?;
        let mut channels = 0;
        for &v in inputs {
            let [vn, vc, vh, vw] = self.rank4(OP, v)?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::shape(
                    OP,
                    "batch/spatial",
                    format!("{:?} vs [{n},_,{h},{w}]", self.value(v).shape()),
                ));
            }
            channels += vc;
        }
        let mut out = Vec::with_capacity(n * channels * h * w);
        for b in 0..n {
            for &v in inputs {
                let t = self.value(v);
                let per = t.shape()[1] * h * w;
                out.extend_from_slice(&t.data()[b * per..(b + 1) * per]);
            }
        }
        let value = Tensor::new(&[n, channels, h, w], out)?;
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            rg,
        )
    }

    /// Spatial crop of every plane.
    pub fn crop(
        &mut self,
        input: Var,
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    ) -> Result<Var> {
        let value = self.value(input).crop(top, left, height, width)?;
        let rg = self.rg(input);
        self.push(value, Op::Crop { input, top, left }, rg)
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(input).sum());
        let rg = self.rg(input);
        self.push(value, Op::Sum { input }, rg)
    }

    /// `½ Σ mask·(pred − target)²` as a scalar. `mask` (length H·W) broadcasts
    /// over the planes of `pred`; pixels where it is zero contribute exactly nothing.
    pub fn half_squared_error(
        &mut self,
        pred: Var,
        target: &[f64],
        mask: Option<&[f64]>,
    ) -> Result<Var> {
        const OP: &str = "half_squared_error";
        let p = self.value(pred);
        if p.numel() != target.len() {
            return Err(Error::shape(
                OP,
                "element count",
                format!("prediction {:?} vs {} target values", p.shape(), target.len()),
            ));
        }
        let (h, w) = p
            .spatial()
            .ok_or_else(|| Error::shape(OP, "rank", "need at least 2 dims"))?;
        if let Some(m) = mask {
            if m.len() != h * w {
                return Err(Error::shape(
                    OP,
                    "mask",
                    format!("mask has {} pixels, map is {h}x{w}", m.len()),
                ));
            }
        }
        let mut acc = 0.0;
        for (i, (x, t)) in p.data().iter().zip(target).enumerate() {
            let m = mask.map_or(1.0, |m| m[i % (h * w)]);
            if m != 0.0 {
                let d = x - t;
                acc += m * d * d;
            }
        }
        let value = Tensor::scalar(0.5 * acc);
        let rg = self.rg(pred);
        self.push(
            value,
            Op::HalfSquaredError {
                pred,
                target: target.to_vec(),
                mask: mask.map(|m| m.to_vec()),
            },
            rg,
        )
    }

    /// Back-propagates from the scalar `loss`, leaving gradients on every
    /// `requires_grad` leaf. Intermediate values are released and the graph
    /// cannot be differentiated again.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(gout) = grads[id].take() else {
                continue;
            };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                if gout.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("backward"));
                }
                self.nodes[id].value.set_grad(gout)?;
                continue;
            }
            self.propagate(id, &gout, &mut grads);
        }

        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.value = Tensor::default();
                node.op = Op::Leaf;
                node.requires_grad = false;
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let acc = |v: Var, grads: &mut [Option<Vec<f64>>], f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(slot);
        };
        match &nodes[id].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                batch,
            } => {
                let x = nodes[input.0].value.data();
                let wt = nodes[weight.0].value.data();
                acc(*input, grads, &mut |gx| {
                    for b in 0..*batch {
                        kernels::conv_backward_input(
                            geom,
                            &gout[b * geom.out_len()..(b + 1) * geom.out_len()],
                            wt,
                            &mut gx[b * geom.in_len()..(b + 1) * geom.in_len()],
                        );
                    }
                });
                acc(*weight, grads, &mut |gw| {
                    for b in 0..*batch {
                        kernels::conv_backward_weight(
                            geom,
                            &x[b * geom.in_len()..(b + 1) * geom.in_len()],
                            &gout[b * geom.out_len()..(b + 1) * geom.out_len()],
                            gw,
                        );
                    }
                });
                if let Some(bias) = bias {
                    let plane = geom.oh * geom.ow;
                    acc(*bias, grads, &mut |gb| {
                        for (i, chunk) in gout.chunks_exact(plane).enumerate() {
                            gb[i % geom.c_out] += chunk.iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::ConvTranspose2d {
                input,
                weight,
                geom,
                batch,
            } => {
                let x = nodes[input.0].value.data();
                let wt = nodes[weight.0].value.data();
                acc(*input, grads, &mut |gx| {
                    for b in 0..*batch {
                        kernels::conv_forward(
                            geom,
                            &gout[b * geom.in_len()..(b + 1) * geom.in_len()],
                            wt,
                            &mut gx[b * geom.out_len()..(b + 1) * geom.out_len()],
                        );
                    }
                });
                acc(*weight, grads, &mut |gw| {
                    for b in 0..*batch {
                        kernels::conv_backward_weight(
                            geom,
                            &gout[b * geom.in_len()..(b + 1) * geom.in_len()],
                            &x[b * geom.out_len()..(b + 1) * geom.out_len()],
                            gw,
                        );
                    }
                });
            }
            Op::MaxPool2d { input, argmax } => {
                acc(*input, grads, &mut |gx| {
                    for (g, &i) in gout.iter().zip(argmax) {
                        gx[i] += g;
                    }
                });
            }
            Op::Relu { input } => {
                let x = nodes[input.0].value.data();
                acc(*input, grads, &mut |gx| {
                    for ((gi, g), xv) in gx.iter_mut().zip(gout).zip(x) {
                        if *xv > 0.0 {
                            *gi += g;
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    acc(v, grads, &mut |gx| {
                        for (gi, g) in gx.iter_mut().zip(gout) {
                            *gi += g;
                        }
                    });
                }
            }
            Op::ScalarMul { input, factor } => {
                acc(*input, grads, &mut |gx| {
                    for (gi, g) in gx.iter_mut().zip(gout) {
                        *gi += factor * g;
                    }
                });
            }
            Op::WeightedSum { inputs, weights } => {
                let wt = nodes[weights.0].value.data();
                for (&v, &wj) in inputs.iter().zip(wt) {
                    acc(v, grads, &mut |gx| {
                        for (gi, g) in gx.iter_mut().zip(gout) {
                            *gi += wj * g;
                        }
                    });
                }
                acc(*weights, grads, &mut |gw| {
                    for (j, &v) in inputs.iter().enumerate() {
                        let x = nodes[v.0].value.data();
                        gw[j] += x.iter().zip(gout).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
            }
            Op::Mask { input, mask } => {
                acc(*input, grads, &mut |gx| {
                    for (gplane, oplane) in gx
                        .chunks_exact_mut(mask.len())
                        .zip(gout.chunks_exact(mask.len()))
                    {
                        for ((gi, g), m) in gplane.iter_mut().zip(oplane).zip(mask) {
                            *gi += m * g;
                        }
                    }
                });
            }
            Op::Concat { inputs } => {
                let shape = nodes[id].value.shape();
                let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                let mut offset = 0;
                for &v in inputs {
                    let vc = nodes[v.0].value.shape()[1];
                    acc(v, grads, &mut |gx| {
                        for b in 0..n {
                            let src = &gout[(b * c + offset) * hw..(b * c + offset + vc) * hw];
                            for (gi, g) in gx[b * vc * hw..(b + 1) * vc * hw].iter_mut().zip(src)
                            {
                                *gi += g;
                            }
                        }
                    });
                    offset += vc;
                }
            }
            Op::Crop { input, top, left } => {
                let (ih, iw) = nodes[input.0].value.spatial().unwrap_or((0, 0));
                let (oh, ow) = nodes[id].value.spatial().unwrap_or((0, 0));
                acc(*input, grads, &mut |gx| {
                    for (gplane, oplane) in gx
                        .chunks_exact_mut(ih * iw)
                        .zip(gout.chunks_exact(oh * ow))
                    {
                        for y in 0..oh {
                            let dst = &mut gplane[(top + y) * iw + left..(top + y) * iw + left + ow];
                            for (gi, g) in dst.iter_mut().zip(&oplane[y * ow..(y + 1) * ow]) {
                                *gi += g;
                            }
                        }
                    }
                });
            }
            Op::Sum { input } => {
                let g = gout[0];
                acc(*input, grads, &mut |gx| {
                    for gi in gx.iter_mut() {
                        *gi += g;
                    }
                });
            }
            Op::HalfSquaredError { pred, target, mask } => {
                let x = nodes[pred.0].value.data();
                let g = gout[0];
                let hw = mask.as_ref().map_or(1, |m| m.len());
                acc(*pred, grads, &mut |gx| {
                    for (i, (gi, (xv, t))) in gx.iter_mut().zip(x.iter().zip(target)).enumerate() {
                        let m = mask.as_ref().map_or(1.0, |m| m[i % hw]);
                        if m != 0.0 {
                            *gi += g * m * (xv - t);
                        }
                    }
                });
            }
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            "shape",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn out_extent(
    op: &'static str,
    dim: &'static str,
    n: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<usize> {
    let span = n + 2 * pad;
    if span < k {
        return Err(Error::shape(
            op,
            dim,
            format!("padded extent {span} smaller than kernel {k}"),
        ));
    }
    if !(span - k).is_multiple_of(stride) {
        return Err(Error::shape(
            op,
            dim,
            format!("({n} + 2*{pad} - {k}) is not divisible by stride {stride}"),
        ));
    }
    Ok((span - k) / stride + 1)
}
