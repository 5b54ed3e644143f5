//! Layers with hand-written forward and backward passes.
//!
//! Activations are batched: dense layers see `[n, features]`, spatial layers
//! see `[n, channels, height, width]`. Backward always accumulates parameter
//! gradients, whatever the `trainable` flag says; freezing is enforced by the
//! optimizer.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Float, Tensor};

/// A trainable tensor together with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    pub trainable: bool,
    pub step_count: u64,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            trainable: true,
            step_count: 0,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Clears the optimizer moments and step counter.
    pub fn reset_optimizer(&mut self) {
        self.m.data_mut().fill(0.0);
        self.v.data_mut().fill(0.0);
        self.grad.data_mut().fill(0.0);
        self.step_count = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    /// Per-channel `scale * x + shift` over dimension 1.
    ScaleShift {
        channels: usize,
    },
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerKind::Dense { in_dim, out_dim } => write!(f, "dense {in_dim} {out_dim}"),
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
            } => write!(f, "conv2d {in_ch} {out_ch} {kernel} {stride} {padding}"),
            LayerKind::Relu => write!(f, "relu"),
            LayerKind::MaxPool2d { window, stride } => write!(f, "maxpool2d {window} {stride}"),
            LayerKind::Flatten => write!(f, "flatten"),
            LayerKind::ScaleShift { channels } => write!(f, "scaleshift {channels}"),
        }
    }
}

impl LayerKind {
    /// Parses the [`Display`](fmt::Display) form back.
    pub fn parse(text: &str) -> Result<Self> {
        let mut it = text.split_whitespace();
        let name = it.next().unwrap_or_default();
        let nums: Vec<usize> = it
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Format(format!("bad layer field {t:?} in {text:?}")))
            })
            .collect::<Result<_>>()?;
        let want = |n: usize| -> Result<()> {
            if nums.len() == n && nums.iter().all(|&v| v > 0 || name == "conv2d") {
                Ok(())
            } else {
                Err(Error::Format(format!("malformed layer line {text:?}")))
            }
        };
        let kind = match name {
            "dense" => {
                want(2)?;
                LayerKind::Dense {
                    in_dim: nums[0],
                    out_dim: nums[1],
                }
            }
            "conv2d" => {
                want(5)?;
                if nums[..4].contains(&0) {
                    return Err(Error::Format(format!("malformed layer line {text:?}")));
                }
                LayerKind::Conv2d {
                    in_ch: nums[0],
                    out_ch: nums[1],
                    kernel: nums[2],
                    stride: nums[3],
                    padding: nums[4],
                }
            }
            "relu" => {
                want(0)?;
                LayerKind::Relu
            }
            "maxpool2d" => {
                want(2)?;
                LayerKind::MaxPool2d {
                    window: nums[0],
                    stride: nums[1],
                }
            }
            "flatten" => {
                want(0)?;
                LayerKind::Flatten
            }
            "scaleshift" => {
                want(1)?;
                LayerKind::ScaleShift { channels: nums[0] }
            }
            _ => return Err(Error::Format(format!("unknown layer kind {name:?}"))),
        };
        Ok(kind)
    }

    /// Shapes of the parameters this kind owns, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerKind::Dense { in_dim, out_dim } => vec![vec![out_dim, in_dim], vec![out_dim]],
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => vec![vec![out_ch, in_ch, kernel, kernel], vec![out_ch]],
            LayerKind::ScaleShift { channels } => vec![vec![channels], vec![channels]],
            LayerKind::Relu | LayerKind::MaxPool2d { .. } | LayerKind::Flatten => vec![],
        }
    }

    /// Output shape (batch dimension included) for an input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let label = self.to_string();
        match *self {
            LayerKind::Dense { in_dim, out_dim } => {
                if input.len() != 2 || input[1] != in_dim {
                    return Err(Error::shape(label, &[input.first().copied().unwrap_or(0), in_dim], input));
                }
                Ok(vec![input[0], out_dim])
            }
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
            } => {
                if input.len() != 4 || input[1] != in_ch {
                    return Err(Error::shape(label, &[input.first().copied().unwrap_or(0), in_ch, 0, 0], input));
                }
                let (h, w) = (input[2] + 2 * padding, input[3] + 2 * padding);
                if h < kernel || w < kernel {
                    return Err(Error::shape(label, &[input[0], in_ch, kernel, kernel], input));
                }
                Ok(vec![input[0], out_ch, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            LayerKind::MaxPool2d { window, stride } => {
                if input.len() != 4 || input[2] < window || input[3] < window {
                    return Err(Error::shape(label, &[input.first().copied().unwrap_or(0), 0, window, window], input));
                }
                Ok(vec![
                    input[0],
                    input[1],
                    (input[2] - window) / stride + 1,
                    (input[3] - window) / stride + 1,
                ])
            }
            LayerKind::ScaleShift { channels } => {
                if input.len() < 2 || input[1] != channels {
                    return Err(Error::shape(label, &[input.first().copied().unwrap_or(0), channels], input));
                }
                Ok(input.to_vec())
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::Flatten => {
                if input.is_empty() {
                    return Err(Error::shape(label, &[0, 0], input));
                }
                Ok(vec![input[0], input[1..].iter().product()])
            }
        }
    }
}

/// Activation record produced by [`Layer::forward`] and consumed by [`Layer::backward`].
#[derive(Debug, Clone)]
pub enum LayerCache {
    Dense { input: Tensor },
    Conv2d { input_shape: Vec<usize>, cols: Vec<Float> },
    Relu { input: Tensor },
    MaxPool2d { input_shape: Vec<usize>, argmax: Vec<usize> },
    Flatten { input_shape: Vec<usize> },
    ScaleShift { input: Tensor },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub params: Vec<Param>,
}

impl Layer {
    /// New layer with zero weights; scale-shift layers start at the identity.
    pub fn new(kind: LayerKind) -> Self {
        let mut params: Vec<Param> = kind.param_shapes().iter().map(|s| Param::zeros(s)).collect();
        if let LayerKind::ScaleShift { .. } = kind {
            params[0].value.data_mut().fill(1.0);
        }
        Self { kind, params }
    }

    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        Self::new(LayerKind::Dense { in_dim, out_dim })
    }

    pub fn conv2d(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self::new(LayerKind::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        })
    }

    pub fn relu() -> Self {
        Self::new(LayerKind::Relu)
    }

    pub fn max_pool(window: usize, stride: usize) -> Self {
        Self::new(LayerKind::MaxPool2d { window, stride })
    }

    pub fn flatten() -> Self {
        Self::new(LayerKind::Flatten)
    }

    pub fn scale_shift(channels: usize) -> Self {
        Self::new(LayerKind::ScaleShift { channels })
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn is_scale_shift(&self) -> bool {
        matches!(self.kind, LayerKind::ScaleShift { .. })
    }

    /// He-normal weights scaled by fan-in, zero biases, identity scale-shift.
    pub fn init_params(&mut self, rng: &mut Rng) {
        let fan_in = match self.kind {
            LayerKind::Dense { in_dim, .. } => in_dim,
            LayerKind::Conv2d { in_ch, kernel, .. } => in_ch * kernel * kernel,
            LayerKind::ScaleShift { .. } => {
                self.params[0].value.data_mut().fill(1.0);
                self.params[1].value.data_mut().fill(0.0);
                return;
            }
            _ => return,
        };
        let std = (2.0 / fan_in as f64).sqrt();
        for w in self.params[0].value.data_mut() {
            *w = (rng.normal() * std) as Float;
        }
        self.params[1].value.data_mut().fill(0.0);
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, LayerCache)> {
        let out_shape = self.kind.output_shape(input.shape())?;
        match self.kind {
            LayerKind::Dense { in_dim, out_dim } => {
                let n = input.rows();
                let mut out = vec![0.0; n * out_dim];
                gemm_nt(n, in_dim, out_dim, input.data(), self.params[0].value.data(), &mut out);
                let bias = self.params[1].value.data();
                for row in out.chunks_exact_mut(out_dim) {
                    for (o, b) in row.iter_mut().zip(bias) {
                        *o += b;
                    }
                }
                Ok((Tensor::new(out_shape, out)?, LayerCache::Dense { input: input.clone() }))
            }
            LayerKind::Conv2d { .. } => self.conv_forward(input, out_shape),
            LayerKind::Relu => {
                let out = Tensor::new(
                    out_shape,
                    input.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
                )?;
                Ok((out, LayerCache::Relu { input: input.clone() }))
            }
            LayerKind::MaxPool2d { window, stride } => {
                let s = input.shape();
                let (c, h, w) = (s[1], s[2], s[3]);
                let (oh, ow) = (out_shape[2], out_shape[3]);
                let src = input.data();
                let mut out = Vec::with_capacity(out_shape.iter().product());
                let mut argmax = Vec::with_capacity(out.capacity());
                for plane in 0..s[0] * c {
                    let base = plane * h * w;
                    for y in 0..oh {
                        for x in 0..ow {
                            let mut best = base + y * stride * w + x * stride;
                            for dy in 0..window {
                                for dx in 0..window {
                                    let idx = base + (y * stride + dy) * w + x * stride + dx;
                                    if src[idx] > src[best] {
                                        best = idx;
                                    }
                                }
                            }
                            out.push(src[best]);
                            argmax.push(best);
                        }
                    }
                }
                Ok((
                    Tensor::new(out_shape, out)?,
                    LayerCache::MaxPool2d {
                        input_shape: s.to_vec(),
                        argmax,
                    },
                ))
            }
            LayerKind::Flatten => Ok((
                input.clone().reshape(&out_shape)?,
                LayerCache::Flatten {
                    input_shape: input.shape().to_vec(),
                },
            )),
            LayerKind::ScaleShift { channels } => {
                let scale = self.params[0].value.data();
                let shift = self.params[1].value.data();
                let inner: usize = input.shape()[2..].iter().product();
                let mut out = input.data().to_vec();
                for (i, chunk) in out.chunks_exact_mut(inner).enumerate() {
                    let ch = i % channels;
                    for v in chunk {
                        *v = scale[ch] * *v + shift[ch];
                    }
                }
                Ok((
                    Tensor::new(out_shape, out)?,
                    LayerCache::ScaleShift {
                        input: input.clone(),
                    },
                ))
            }
        }
    }

    /// Back-propagates `grad_out`, accumulating into every `Param::grad`.
    pub fn backward(&mut self, cache: &LayerCache, grad_out: &Tensor) -> Result<Tensor> {
        self.backward_impl(cache, grad_out, true)
            .map(|g| g.expect("input gradient requested"))
    }

    /// As [`backward`](Self::backward), but skips the input gradient when it
    /// is not needed (the lowest layer that receives gradients).
    pub(crate) fn backward_impl(
        &mut self,
        cache: &LayerCache,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let label = self.kind.to_string();
        match (self.kind, cache) {
            (LayerKind::Dense { in_dim, out_dim }, LayerCache::Dense { input }) => {
                let n = input.rows();
                check_grad(&label, &[n, out_dim], grad_out)?;
                let g = grad_out.data();
                gemm_tn(out_dim, n, in_dim, g, input.data(), self.params[0].grad.data_mut());
                let bias_grad = self.params[1].grad.data_mut();
                for row in g.chunks_exact(out_dim) {
                    for (b, v) in bias_grad.iter_mut().zip(row) {
                        *b += v;
                    }
                }
                if !need_input_grad {
                    return Ok(None);
                }
                let mut gin = vec![0.0; n * in_dim];
                gemm_nn(n, out_dim, in_dim, g, self.params[0].value.data(), &mut gin);
                Ok(Some(Tensor::new(input.shape().to_vec(), gin)?))
            }
            (LayerKind::Conv2d { .. }, LayerCache::Conv2d { input_shape, cols }) => {
                self.conv_backward(input_shape, cols, grad_out, need_input_grad)
            }
            (LayerKind::Relu, LayerCache::Relu { input }) => {
                check_grad(&label, input.shape(), grad_out)?;
                if !need_input_grad {
                    return Ok(None);
                }
                let gin = input
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                Ok(Some(Tensor::new(input.shape().to_vec(), gin)?))
            }
            (LayerKind::MaxPool2d { .. }, LayerCache::MaxPool2d { input_shape, argmax }) => {
                let expected = self.kind.output_shape(input_shape)?;
                check_grad(&label, &expected, grad_out)?;
                if !need_input_grad {
                    return Ok(None);
                }
                let mut gin = Tensor::zeros(input_shape);
                let dst = gin.data_mut();
                for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
                    dst[idx] += g;
                }
                Ok(Some(gin))
            }
            (LayerKind::Flatten, LayerCache::Flatten { input_shape }) => {
                let expected = self.kind.output_shape(input_shape)?;
                check_grad(&label, &expected, grad_out)?;
                if !need_input_grad {
                    return Ok(None);
                }
                Ok(Some(grad_out.clone().reshape(input_shape)?))
            }
            (LayerKind::ScaleShift { channels }, LayerCache::ScaleShift { input }) => {
                check_grad(&label, input.shape(), grad_out)?;
                let inner: usize = input.shape()[2..].iter().product();
                let (xs, gs) = (input.data(), grad_out.data());
                {
                    let (scale_p, shift_p) = self.params.split_at_mut(1);
                    let ds = scale_p[0].grad.data_mut();
                    let db = shift_p[0].grad.data_mut();
                    for (i, (xc, gc)) in xs.chunks_exact(inner).zip(gs.chunks_exact(inner)).enumerate() {
                        let ch = i % channels;
                        let mut sx = 0.0;
                        let mut sg = 0.0;
                        for (x, g) in xc.iter().zip(gc) {
                            sx += x * g;
                            sg += g;
                        }
                        ds[ch] += sx;
                        db[ch] += sg;
                    }
                }
                if !need_input_grad {
                    return Ok(None);
                }
                let scale = self.params[0].value.data();
                let mut gin = gs.to_vec();
                for (i, chunk) in gin.chunks_exact_mut(inner).enumerate() {
                    let s = scale[i % channels];
                    for v in chunk {
                        *v *= s;
                    }
                }
                Ok(Some(Tensor::new(input.shape().to_vec(), gin)?))
            }
            _ => Err(Error::InvalidArgument(format!(
                "cache does not belong to layer {label}"
            ))),
        }
    }

    fn conv_geometry(&self, input_shape: &[usize]) -> ConvGeometry {
        let LayerKind::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        } = self.kind
        else {
            unreachable!("conv geometry on non-conv layer");
        };
        let (h, w) = (input_shape[2], input_shape[3]);
        ConvGeometry {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            h,
            w,
            oh: (h + 2 * padding - kernel) / stride + 1,
            ow: (w + 2 * padding - kernel) / stride + 1,
        }
    }

    fn conv_forward(&self, input: &Tensor, out_shape: Vec<usize>) -> Result<(Tensor, LayerCache)> {
        let g = self.conv_geometry(input.shape());
        let n = input.rows();
        let (rows, spatial) = (g.in_ch * g.kernel * g.kernel, g.oh * g.ow);
        let mut cols = vec![0.0; n * rows * spatial];
        let mut out = vec![0.0; n * g.out_ch * spatial];
        let weight = self.params[0].value.data();
        let bias = self.params[1].value.data();
        let in_len = g.in_ch * g.h * g.w;
        for s in 0..n {
            let col = &mut cols[s * rows * spatial..(s + 1) * rows * spatial];
            g.im2col(&input.data()[s * in_len..(s + 1) * in_len], col);
            let o = &mut out[s * g.out_ch * spatial..(s + 1) * g.out_ch * spatial];
            for (oc, plane) in o.chunks_exact_mut(spatial).enumerate() {
                plane.fill(bias[oc]);
            }
            gemm_nn(g.out_ch, rows, spatial, weight, col, o);
        }
        Ok((
            Tensor::new(out_shape, out)?,
            LayerCache::Conv2d {
                input_shape: input.shape().to_vec(),
                cols,
            },
        ))
    }

    fn conv_backward(
        &mut self,
        input_shape: &[usize],
        cols: &[Float],
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let g = self.conv_geometry(input_shape);
        let n = input_shape[0];
        check_grad(&self.kind.to_string(), &[n, g.out_ch, g.oh, g.ow], grad_out)?;
        let (rows, spatial) = (g.in_ch * g.kernel * g.kernel, g.oh * g.ow);
        let go = grad_out.data();
        {
            let (wp, bp) = self.params.split_at_mut(1);
            let wgrad = wp[0].grad.data_mut();
            let bgrad = bp[0].grad.data_mut();
            for s in 0..n {
                let gs = &go[s * g.out_ch * spatial..(s + 1) * g.out_ch * spatial];
                let col = &cols[s * rows * spatial..(s + 1) * rows * spatial];
                gemm_nt(g.out_ch, spatial, rows, gs, col, wgrad);
                for (oc, plane) in gs.chunks_exact(spatial).enumerate() {
                    bgrad[oc] += plane.iter().sum::<Float>();
                }
            }
        }
        if !need_input_grad {
            return Ok(None);
        }
        let weight = self.params[0].value.data();
        let in_len = g.in_ch * g.h * g.w;
        let mut gin = vec![0.0; n * in_len];
        let mut dcol = vec![0.0; rows * spatial];
        for s in 0..n {
            dcol.fill(0.0);
            let gs = &go[s * g.out_ch * spatial..(s + 1) * g.out_ch * spatial];
            gemm_tn(rows, g.out_ch, spatial, weight, gs, &mut dcol);
            g.col2im(&dcol, &mut gin[s * in_len..(s + 1) * in_len]);
        }
        Ok(Some(Tensor::new(input_shape.to_vec(), gin)?))
    }
}

fn check_grad(layer: &str, expected: &[usize], grad: &Tensor) -> Result<()> {
    if grad.shape() != expected {
        return Err(Error::shape(layer, expected, grad.shape()));
    }
    Ok(())
}

struct ConvGeometry {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeometry {
    /// Visits every (column row, output position, input index) triple.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let spatial = self.oh * self.ow;
        for c in 0..self.in_ch {
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let row = (c * self.kernel + ky) * self.kernel + kx;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(
                                row * spatial + oy * self.ow + ox,
                                (c * self.h + iy as usize) * self.w + ix as usize,
                            );
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, image: &[Float], col: &mut [Float]) {
        self.for_each_tap(|ci, ii| col[ci] = image[ii]);
    }

    fn col2im(&self, col: &[Float], image: &mut [Float]) {
        self.for_each_tap(|ci, ii| image[ii] += col[ci]);
    }
}
