//! Layer kinds and their forward/backward passes.
//!
//! Spatial tensors are laid out `(batch, channels, height, width)`, flat
//! tensors `(batch, units)`. Convolutions are lowered to a matrix product per
//! sample (im2col); the column buffer is rebuilt in the backward pass rather
//! than cached, trading a little compute for much smaller forward caches.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimexError};
use crate::rng::RngStream;

use super::{Scalar, Tensor};

/// Discriminant of [`Layer`], used in reports and shape errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv2d,
    MaxPool2,
    Upsample2,
    Dense,
    Relu,
    Sigmoid,
    Reshape,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::MaxPool2 => "maxpool2",
            LayerKind::Upsample2 => "upsample2",
            LayerKind::Dense => "dense",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Reshape => "reshape",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// Symmetric zero padding: `0` is "valid", `(kernel - 1) / 2` is "same",
    /// `kernel - 1` is "full".
    pub pad: usize,
    /// `(out_channels, in_channels, kernel, kernel)`
    pub weight: Tensor<T>,
    /// `(out_channels)`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub in_units: usize,
    pub out_units: usize,
    /// `(out_units, in_units)`
    pub weight: Tensor<T>,
    /// `(out_units)`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    /// Non-overlapping 2x2 max pooling; odd trailing rows/columns are dropped.
    MaxPool2,
    /// Nearest-neighbour x2 upsampling. With an explicit target the output is
    /// cropped or edge-extended by at most one pixel per axis; output pixel
    /// `i` reads input pixel `min(i / 2, len - 1)`.
    Upsample2 { target: Option<(usize, usize)> },
    Dense(Dense<T>),
    Relu,
    Sigmoid,
    /// Reshape every batch entry to `shape`.
    Reshape { shape: Vec<usize> },
}

/// What a layer's backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    Input(Tensor<T>),
    Output(Tensor<T>),
    Argmax { input_shape: Vec<usize>, indices: Vec<usize> },
    InputShape(Vec<usize>),
}

impl<T: Scalar> Layer<T> {
    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize, pad: usize) -> Self {
        Layer::Conv2d(Conv2d {
            in_channels,
            out_channels,
            kernel,
            pad,
            weight: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: Tensor::zeros(&[out_channels]),
        })
    }

    pub fn dense(in_units: usize, out_units: usize) -> Self {
        Layer::Dense(Dense {
            in_units,
            out_units,
            weight: Tensor::zeros(&[out_units, in_units]),
            bias: Tensor::zeros(&[out_units]),
        })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::MaxPool2 => LayerKind::MaxPool2,
            Layer::Upsample2 { .. } => LayerKind::Upsample2,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Relu => LayerKind::Relu,
            Layer::Sigmoid => LayerKind::Sigmoid,
            Layer::Reshape { .. } => LayerKind::Reshape,
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    /// Param-free layers are left untouched.
    pub fn init_params(&mut self, rng: &mut RngStream) {
        let (weight, bias, fan_in, fan_out) = match self {
            Layer::Conv2d(c) => {
                let area = c.kernel * c.kernel;
                (&mut c.weight, &mut c.bias, c.in_channels * area, c.out_channels * area)
            }
            Layer::Dense(d) => (&mut d.weight, &mut d.bias, d.in_units, d.out_units),
            _ => return,
        };
        let bound = glorot_bound(fan_in, fan_out);
        for w in weight.data_mut() {
            *w = T::from_f64_lossy(rng.uniform_range(-bound, bound));
        }
        for b in bias.data_mut() {
            *b = T::zero();
        }
    }

    /// Output shape (including the batch axis) for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(c) => {
                let [n, ch, h, w] = spatial(input, "conv2d")?;
                if ch != c.in_channels {
                    return Err(SimexError::shape(
                        "conv2d input channels",
                        &[n, c.in_channels, h, w],
                        input,
                    ));
                }
                let (hp, wp) = (h + 2 * c.pad, w + 2 * c.pad);
                if hp < c.kernel || wp < c.kernel {
                    return Err(SimexError::shape(
                        "conv2d spatial extent",
                        &[n, ch, c.kernel, c.kernel],
                        input,
                    ));
                }
                Ok(vec![n, c.out_channels, hp - c.kernel + 1, wp - c.kernel + 1])
            }
            Layer::MaxPool2 => {
                let [n, ch, h, w] = spatial(input, "maxpool2")?;
                if h < 2 || w < 2 {
                    return Err(SimexError::shape("maxpool2 spatial extent", &[n, ch, 2, 2], input));
                }
                Ok(vec![n, ch, h / 2, w / 2])
            }
            Layer::Upsample2 { target } => {
                let [n, ch, h, w] = spatial(input, "upsample2")?;
                match *target {
                    None => Ok(vec![n, ch, 2 * h, 2 * w]),
                    Some((th, tw)) => {
                        let ok = |t: usize, s: usize| t + 1 >= 2 * s && t <= 2 * s + 1;
                        if !ok(th, h) || !ok(tw, w) {
                            return Err(SimexError::shape(
                                "upsample2 target",
                                &[n, ch, (th + 1) / 2, (tw + 1) / 2],
                                input,
                            ));
                        }
                        Ok(vec![n, ch, th, tw])
                    }
                }
            }
            Layer::Dense(d) => {
                if input.len() != 2 || input[1] != d.in_units {
                    return Err(SimexError::shape(
                        "dense input",
                        &[input.first().copied().unwrap_or(0), d.in_units],
                        input,
                    ));
                }
                Ok(vec![input[0], d.out_units])
            }
            Layer::Relu | Layer::Sigmoid => {
                if input.is_empty() {
                    return Err(SimexError::shape("activation input", &[1], input));
                }
                Ok(input.to_vec())
            }
            Layer::Reshape { shape } => {
                let per: usize = input.iter().skip(1).product();
                if input.is_empty() || per != shape.iter().product::<usize>() {
                    let mut expected = vec![input.first().copied().unwrap_or(0)];
                    expected.extend_from_slice(shape);
                    return Err(SimexError::shape("reshape", &expected, input));
                }
                let mut out = vec![input[0]];
                out.extend_from_slice(shape);
                Ok(out)
            }
        }
    }

    /// Forward pass returning the output and what backward will need.
    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
        let out_shape = self.output_shape(input.shape())?;
        match self {
            Layer::Conv2d(c) => {
                let out = conv_forward(c, input, &out_shape);
                Ok((out, Cache::Input(input.clone())))
            }
            Layer::MaxPool2 => {
                let (out, indices) = maxpool_forward(input, &out_shape);
                Ok((
                    out,
                    Cache::Argmax {
                        input_shape: input.shape().to_vec(),
                        indices,
                    },
                ))
            }
            Layer::Upsample2 { .. } => {
                let out = upsample_forward(input, &out_shape);
                Ok((out, Cache::InputShape(input.shape().to_vec())))
            }
            Layer::Dense(d) => {
                let out = dense_forward(d, input);
                Ok((out, Cache::Input(input.clone())))
            }
            Layer::Relu => {
                let out = input.map(|v| if v > T::zero() { v } else { T::zero() });
                Ok((out, Cache::Input(input.clone())))
            }
            Layer::Sigmoid => {
                let out = input.map(sigmoid);
                Ok((out.clone(), Cache::Output(out)))
            }
            Layer::Reshape { .. } => {
                let shape = input.shape().to_vec();
                Ok((input.clone().reshape(&out_shape)?, Cache::InputShape(shape)))
            }
        }
    }

    /// Inference-only forward pass; skips building the cache.
    pub fn apply(&self, input: Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Relu => {
                self.output_shape(input.shape())?;
                let mut x = input;
                for v in x.data_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
                Ok(x)
            }
            Layer::Sigmoid => {
                self.output_shape(input.shape())?;
                let mut x = input;
                for v in x.data_mut() {
                    *v = sigmoid(*v);
                }
                Ok(x)
            }
            Layer::Reshape { .. } => {
                let shape = self.output_shape(input.shape())?;
                input.reshape(&shape)
            }
            _ => Ok(self.forward(&input)?.0),
        }
    }

    /// Backward pass: gradient w.r.t. the input and one gradient per
    /// parameter tensor (same order as [`Layer::params`]).
    pub fn backward(&self, cache: &Cache<T>, grad_output: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let (gi, gp) = self.backward_impl(cache, grad_output, true)?;
        Ok((gi.expect("input gradient requested"), gp))
    }

    pub(crate) fn backward_impl(
        &self,
        cache: &Cache<T>,
        grad_output: &Tensor<T>,
        want_input: bool,
    ) -> Result<(Option<Tensor<T>>, Vec<Tensor<T>>)> {
        let name = self.kind().name();
        match (self, cache) {
            (Layer::Conv2d(c), Cache::Input(x)) => {
                let expected = self.output_shape(x.shape())?;
                check_grad(name, &expected, grad_output)?;
                let (gi, gw, gb) = conv_backward(c, x, grad_output, want_input);
                Ok((gi, vec![gw, gb]))
            }
            (Layer::MaxPool2, Cache::Argmax { input_shape, indices }) => {
                let expected = self.output_shape(input_shape)?;
                check_grad(name, &expected, grad_output)?;
                let mut gi = Tensor::zeros(input_shape);
                let gd = gi.data_mut();
                for (g, &i) in grad_output.data().iter().zip(indices) {
                    gd[i] = gd[i] + *g;
                }
                Ok((Some(gi), Vec::new()))
            }
            (Layer::Upsample2 { .. }, Cache::InputShape(input_shape)) => {
                let expected = self.output_shape(input_shape)?;
                check_grad(name, &expected, grad_output)?;
                Ok((Some(upsample_backward(grad_output, input_shape)), Vec::new()))
            }
            (Layer::Dense(d), Cache::Input(x)) => {
                check_grad(name, &[x.batch(), d.out_units], grad_output)?;
                let (gi, gw, gb) = dense_backward(d, x, grad_output, want_input);
                Ok((gi, vec![gw, gb]))
            }
            (Layer::Relu, Cache::Input(x)) => {
                check_grad(name, x.shape(), grad_output)?;
                let data = x
                    .data()
                    .iter()
                    .zip(grad_output.data())
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                Ok((Some(Tensor::from_vec(x.shape(), data)?), Vec::new()))
            }
            (Layer::Sigmoid, Cache::Output(y)) => {
                check_grad(name, y.shape(), grad_output)?;
                let data = y
                    .data()
                    .iter()
                    .zip(grad_output.data())
                    .map(|(&s, &g)| g * s * (T::one() - s))
                    .collect();
                Ok((Some(Tensor::from_vec(y.shape(), data)?), Vec::new()))
            }
            (Layer::Reshape { .. }, Cache::InputShape(input_shape)) => {
                let expected = self.output_shape(input_shape)?;
                check_grad(name, &expected, grad_output)?;
                Ok((Some(grad_output.clone().reshape(input_shape)?), Vec::new()))
            }
            _ => Err(SimexError::MissingCache(name)),
        }
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

fn spatial(shape: &[usize], context: &'static str) -> Result<[usize; 4]> {
    match shape {
        [n, c, h, w] => Ok([*n, *c, *h, *w]),
        _ => Err(SimexError::shape(context, &[0, 0, 0, 0], shape)),
    }
}

fn check_grad<T: Scalar>(context: &'static str, expected: &[usize], grad: &Tensor<T>) -> Result<()> {
    if grad.shape() != expected {
        return Err(SimexError::shape(context, expected, grad.shape()));
    }
    Ok(())
}

/// Valid output columns `[lo, hi)` for kernel column `kj`, i.e. those whose
/// input column `ox + kj - pad` lies inside `0..w`.
fn valid_span(kj: usize, pad: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kj).min(wo);
    let hi = (w + pad).saturating_sub(kj).min(wo).max(lo);
    (lo, hi)
}

/// Unfold one sample into `cols`, a `(C*k*k) x row_stride` matrix whose
/// first `ho*wo` columns (starting at `col_offset`) are written.
fn im2col<T: Scalar>(
    x: &[T],
    c: &Conv2d<T>,
    (h, w, ho, wo): (usize, usize, usize, usize),
    cols: &mut [T],
    row_stride: usize,
    col_offset: usize,
) {
    let k = c.kernel;
    let npos = ho * wo;
    for ch in 0..c.in_channels {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let r = (ch * k + ki) * k + kj;
                let row = &mut cols[r * row_stride + col_offset..][..npos];
                let (lo, hi) = valid_span(kj, c.pad, w, wo);
                for oy in 0..ho {
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    let iy = (oy + ki).wrapping_sub(c.pad);
                    if iy >= h {
                        dst.fill(T::zero());
                        continue;
                    }
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if hi > lo {
                        let start = iy * w + lo + kj - c.pad;
                        dst[lo..hi].copy_from_slice(&plane[start..start + (hi - lo)]);
                    }
                }
            }
        }
    }
}

/// Fold `cols` (laid out as in [`im2col`]) back onto one sample's input
/// gradient, accumulating overlaps.
fn col2im<T: Scalar>(
    cols: &[T],
    c: &Conv2d<T>,
    (h, w, ho, wo): (usize, usize, usize, usize),
    row_stride: usize,
    col_offset: usize,
    dx: &mut [T],
) {
    let k = c.kernel;
    let npos = ho * wo;
    for ch in 0..c.in_channels {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let r = (ch * k + ki) * k + kj;
                let row = &cols[r * row_stride + col_offset..][..npos];
                let (lo, hi) = valid_span(kj, c.pad, w, wo);
                if hi == lo {
                    continue;
                }
                for oy in 0..ho {
                    let iy = (oy + ki).wrapping_sub(c.pad);
                    if iy >= h {
                        continue;
                    }
                    let start = iy * w + lo + kj - c.pad;
                    let dst = &mut plane[start..start + (hi - lo)];
                    for (d, &g) in dst.iter_mut().zip(&row[oy * wo + lo..oy * wo + hi]) {
                        *d = *d + g;
                    }
                }
            }
        }
    }
}

/// Target size, in elements, of the unfolded buffer shared by a group of
/// samples; larger groups fall out of cache.
const UNFOLD_BUDGET: usize = 1 << 17;

fn unfold_group(samples: usize, per_sample: usize) -> usize {
    (UNFOLD_BUDGET / per_sample.max(1)).clamp(1, 32).min(samples.max(1))
}

/// Channel pairs at or below which the forward pass accumulates shifted
/// rows directly instead of unfolding; unfolding is memory-bound there.
const DIRECT_CHANNEL_PAIRS: usize = 8;

fn conv_forward_direct<T: Scalar>(c: &Conv2d<T>, x: &Tensor<T>, out_shape: &[usize]) -> Tensor<T> {
    let (n, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (out_shape[2], out_shape[3]);
    let k = c.kernel;
    let npos = ho * wo;
    let mut out = Tensor::zeros(out_shape);
    let weights = c.weight.data();
    for s in 0..n {
        let input = x.sample(s);
        let dst = &mut out.data_mut()[s * c.out_channels * npos..][..c.out_channels * npos];
        for (o, acc) in dst.chunks_mut(npos).enumerate() {
            acc.fill(c.bias.data()[o]);
            for ch in 0..c.in_channels {
                let plane = &input[ch * h * w..(ch + 1) * h * w];
                for ki in 0..k {
                    for kj in 0..k {
                        let wv = weights[((o * c.in_channels + ch) * k + ki) * k + kj];
                        let (lo, hi) = valid_span(kj, c.pad, w, wo);
                        if hi == lo {
                            continue;
                        }
                        for oy in 0..ho {
                            let iy = (oy + ki).wrapping_sub(c.pad);
                            if iy >= h {
                                continue;
                            }
                            let start = iy * w + lo + kj - c.pad;
                            let src = &plane[start..start + (hi - lo)];
                            for (a, &v) in acc[oy * wo + lo..oy * wo + hi].iter_mut().zip(src) {
                                *a = *a + wv * v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_forward<T: Scalar>(c: &Conv2d<T>, x: &Tensor<T>, out_shape: &[usize]) -> Tensor<T> {
    if c.in_channels * c.out_channels <= DIRECT_CHANNEL_PAIRS {
        return conv_forward_direct(c, x, out_shape);
    }
    let (n, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (out_shape[2], out_shape[3]);
    let npos = ho * wo;
    let ckk = c.in_channels * c.kernel * c.kernel;
    let per_out = c.out_channels * npos;
    let mut out = Tensor::zeros(out_shape);
    let group = unfold_group(n, ckk * npos);
    let mut cols = vec![T::zero(); ckk * npos * group];
    let mut prod = vec![T::zero(); c.out_channels * npos * group];
    for first in (0..n).step_by(group) {
        let g = group.min(n - first);
        let width = g * npos;
        for j in 0..g {
            im2col(x.sample(first + j), c, (h, w, ho, wo), &mut cols, width, j * npos);
        }
        // prod (O x g*P) = W (O x CKK) * cols (CKK x g*P)
        T::gemm(
            c.out_channels,
            ckk,
            width,
            T::one(),
            c.weight.data(),
            ckk as isize,
            1,
            &cols[..ckk * width],
            width as isize,
            1,
            T::zero(),
            &mut prod[..c.out_channels * width],
            width as isize,
            1,
        );
        for j in 0..g {
            let dst = &mut out.data_mut()[(first + j) * per_out..][..per_out];
            for (o, row) in dst.chunks_mut(npos).enumerate() {
                let b = c.bias.data()[o];
                let src = &prod[o * width + j * npos..][..npos];
                for (d, &v) in row.iter_mut().zip(src) {
                    *d = v + b;
                }
            }
        }
    }
    out
}

fn conv_backward<T: Scalar>(
    c: &Conv2d<T>,
    x: &Tensor<T>,
    grad: &Tensor<T>,
    want_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let mut gb = Tensor::zeros(c.bias.shape());
    let npos = grad.shape()[2] * grad.shape()[3];
    for s in 0..grad.shape()[0] {
        for (o, row) in grad.sample(s).chunks(npos).enumerate() {
            let acc = row.iter().fold(T::zero(), |a, &v| a + v);
            gb.data_mut()[o] = gb.data()[o] + acc;
        }
    }
    let (gi, gw) = if c.in_channels * c.out_channels <= DIRECT_CHANNEL_PAIRS {
        conv_backward_direct(c, x, grad, want_input)
    } else {
        conv_backward_unfolded(c, x, grad, want_input)
    };
    (gi, gw, gb)
}

fn conv_backward_direct<T: Scalar>(
    c: &Conv2d<T>,
    x: &Tensor<T>,
    grad: &Tensor<T>,
    want_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>) {
    let (n, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (grad.shape()[2], grad.shape()[3]);
    let k = c.kernel;
    let npos = ho * wo;
    let mut gw = Tensor::zeros(c.weight.shape());
    let mut gi = want_input.then(|| Tensor::zeros(x.shape()));
    let weights = c.weight.data();
    for s in 0..n {
        let input = x.sample(s);
        let g = grad.sample(s);
        for o in 0..c.out_channels {
            let go = &g[o * npos..(o + 1) * npos];
            for ch in 0..c.in_channels {
                let plane = ch * h * w;
                for ki in 0..k {
                    for kj in 0..k {
                        let widx = ((o * c.in_channels + ch) * k + ki) * k + kj;
                        let (lo, hi) = valid_span(kj, c.pad, w, wo);
                        if hi == lo {
                            continue;
                        }
                        let mut dot = T::zero();
                        for oy in 0..ho {
                            let iy = (oy + ki).wrapping_sub(c.pad);
                            if iy >= h {
                                continue;
                            }
                            let start = plane + iy * w + lo + kj - c.pad;
                            let gs = &go[oy * wo + lo..oy * wo + hi];
                            let xs = &input[start..start + (hi - lo)];
                            dot = gs.iter().zip(xs).fold(dot, |a, (&gv, &xv)| a + gv * xv);
                            if let Some(gi) = gi.as_mut() {
                                let wv = weights[widx];
                                let per_in = c.in_channels * h * w;
                                let dst = &mut gi.data_mut()[s * per_in + start..][..hi - lo];
                                for (d, &gv) in dst.iter_mut().zip(gs) {
                                    *d = *d + wv * gv;
                                }
                            }
                        }
                        gw.data_mut()[widx] = gw.data()[widx] + dot;
                    }
                }
            }
        }
    }
    (gi, gw)
}

fn conv_backward_unfolded<T: Scalar>(
    c: &Conv2d<T>,
    x: &Tensor<T>,
    grad: &Tensor<T>,
    want_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>) {
    let (n, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (grad.shape()[2], grad.shape()[3]);
    let dims = (h, w, ho, wo);
    let npos = ho * wo;
    let ckk = c.in_channels * c.kernel * c.kernel;
    let per_in = c.in_channels * h * w;
    let mut gw = Tensor::zeros(c.weight.shape());
    let mut gi = want_input.then(|| Tensor::zeros(x.shape()));
    let group = unfold_group(n, ckk * npos);
    let mut cols = vec![T::zero(); ckk * npos * group];
    let mut gout = vec![T::zero(); c.out_channels * npos * group];
    let mut dcols = vec![T::zero(); if want_input { ckk * npos * group } else { 0 }];
    for first in (0..n).step_by(group) {
        let g = group.min(n - first);
        let width = g * npos;
        for j in 0..g {
            im2col(x.sample(first + j), c, dims, &mut cols, width, j * npos);
            for (o, row) in grad.sample(first + j).chunks(npos).enumerate() {
                gout[o * width + j * npos..][..npos].copy_from_slice(row);
            }
        }
        // dW^T (CKK x O) += cols (CKK x gP) * dOut^T (gP x O)
        T::gemm(
            ckk,
            width,
            c.out_channels,
            T::one(),
            &cols[..ckk * width],
            width as isize,
            1,
            &gout[..c.out_channels * width],
            1,
            width as isize,
            T::one(),
            gw.data_mut(),
            1,
            ckk as isize,
        );
        if let Some(gi) = gi.as_mut() {
            // dcols = W^T (CKK x O) * dOut (O x gP)
            T::gemm(
                ckk,
                c.out_channels,
                width,
                T::one(),
                c.weight.data(),
                1,
                ckk as isize,
                &gout[..c.out_channels * width],
                width as isize,
                1,
                T::zero(),
                &mut dcols[..ckk * width],
                width as isize,
                1,
            );
            for j in 0..g {
                let dst = &mut gi.data_mut()[(first + j) * per_in..][..per_in];
                col2im(&dcols, c, dims, width, j * npos, dst);
            }
        }
    }
    (gi, gw)
}

fn maxpool_forward<T: Scalar>(x: &Tensor<T>, out_shape: &[usize]) -> (Tensor<T>, Vec<usize>) {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let (ho, wo) = (out_shape[2], out_shape[3]);
    let planes = out_shape[0] * out_shape[1];
    let mut out = Tensor::zeros(out_shape);
    let mut indices = vec![0usize; out.len()];
    let xd = x.data();
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                let o = (p * ho + oy) * wo + ox;
                out.data_mut()[o] = xd[best];
                indices[o] = best;
            }
        }
    }
    (out, indices)
}

fn upsample_forward<T: Scalar>(x: &Tensor<T>, out_shape: &[usize]) -> Tensor<T> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let (ho, wo) = (out_shape[2], out_shape[3]);
    let planes = out_shape[0] * out_shape[1];
    let mut out = Tensor::zeros(out_shape);
    let xd = x.data();
    let od = out.data_mut();
    for p in 0..planes {
        for oy in 0..ho {
            let iy = (oy / 2).min(h - 1);
            for ox in 0..wo {
                let ix = (ox / 2).min(w - 1);
                od[(p * ho + oy) * wo + ox] = xd[(p * h + iy) * w + ix];
            }
        }
    }
    out
}

fn upsample_backward<T: Scalar>(grad: &Tensor<T>, input_shape: &[usize]) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (ho, wo) = (grad.shape()[2], grad.shape()[3]);
    let planes = input_shape[0] * input_shape[1];
    let mut gi = Tensor::zeros(input_shape);
    let gd = grad.data();
    let id = gi.data_mut();
    for p in 0..planes {
        for oy in 0..ho {
            let iy = (oy / 2).min(h - 1);
            for ox in 0..wo {
                let ix = (ox / 2).min(w - 1);
                let i = (p * h + iy) * w + ix;
                id[i] = id[i] + gd[(p * ho + oy) * wo + ox];
            }
        }
    }
    gi
}

fn dense_forward<T: Scalar>(d: &Dense<T>, x: &Tensor<T>) -> Tensor<T> {
    let n = x.batch();
    let mut out = Tensor::zeros(&[n, d.out_units]);
    for row in out.data_mut().chunks_mut(d.out_units) {
        row.copy_from_slice(d.bias.data());
    }
    // out (N x O) += X (N x I) * W^T (I x O)
    T::gemm(
        n,
        d.in_units,
        d.out_units,
        T::one(),
        x.data(),
        d.in_units as isize,
        1,
        d.weight.data(),
        1,
        d.in_units as isize,
        T::one(),
        out.data_mut(),
        d.out_units as isize,
        1,
    );
    out
}

fn dense_backward<T: Scalar>(
    d: &Dense<T>,
    x: &Tensor<T>,
    grad: &Tensor<T>,
    want_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let n = x.batch();
    let mut gw = Tensor::zeros(d.weight.shape());
    let mut gb = Tensor::zeros(d.bias.shape());
    for row in grad.data().chunks(d.out_units) {
        for (b, &g) in gb.data_mut().iter_mut().zip(row) {
            *b = *b + g;
        }
    }
    // dW (O x I) = dOut^T (O x N) * X (N x I)
    T::gemm(
        d.out_units,
        n,
        d.in_units,
        T::one(),
        grad.data(),
        1,
        d.out_units as isize,
        x.data(),
        d.in_units as isize,
        1,
        T::zero(),
        gw.data_mut(),
        d.in_units as isize,
        1,
    );
    let gi = want_input.then(|| {
        let mut gi = Tensor::zeros(x.shape());
        // dX (N x I) = dOut (N x O) * W (O x I)
        T::gemm(
            n,
            d.out_units,
            d.in_units,
            T::one(),
            grad.data(),
            d.out_units as isize,
            1,
            d.weight.data(),
            d.in_units as isize,
            1,
            T::zero(),
            gi.data_mut(),
            d.in_units as isize,
            1,
        );
        gi
    });
    (gi, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_conv_reproduces_input() {
        let mut layer = Layer::<f64>::conv2d(1, 1, 3, 1);
        if let Layer::Conv2d(c) = &mut layer {
            c.weight.data_mut()[4] = 1.0;
        }
        let mut rng = RngStream::new(5);
        let data: Vec<f64> = (0..64).map(|_| rng.uniform()).collect();
        let x = Tensor::from_vec(&[1, 1, 8, 8], data).unwrap();
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn maxpool_takes_window_max() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let (y, _) = Layer::MaxPool2.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.]);
    }

    #[test]
    fn dense_hand_product() {
        let mut layer = Layer::<f64>::dense(2, 2);
        if let Layer::Dense(d) = &mut layer {
            d.weight = Tensor::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
            d.bias = Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap();
        }
        let x = Tensor::from_vec(&[1, 2], vec![1., 1.]).unwrap();
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y.data(), &[3.5, 6.5]);
    }

    #[test]
    fn relu_backward_gates() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![-1., 2.]).unwrap();
        let (_, cache) = Layer::Relu.forward(&x).unwrap();
        let g = Tensor::from_vec(&[1, 2], vec![5., 7.]).unwrap();
        let (gi, gp) = Layer::Relu.backward(&cache, &g).unwrap();
        assert_eq!(gi.data(), &[0., 7.]);
        assert!(gp.is_empty());
    }

    #[test]
    fn sigmoid_backward_at_zero() {
        let x = Tensor::<f64>::from_vec(&[1, 1], vec![0.]).unwrap();
        let (_, cache) = Layer::Sigmoid.forward(&x).unwrap();
        let g = Tensor::from_vec(&[1, 1], vec![1.]).unwrap();
        let (gi, _) = Layer::Sigmoid.backward(&cache, &g).unwrap();
        assert_eq!(gi.data(), &[0.25]);
    }

    #[test]
    fn dense_backward_weight_is_outer_product() {
        let mut layer = Layer::<f64>::dense(3, 2);
        layer.init_params(&mut RngStream::new(1));
        let x = Tensor::from_vec(&[1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let (_, cache) = layer.forward(&x).unwrap();
        let g = Tensor::from_vec(&[1, 2], vec![3.0, -2.0]).unwrap();
        let (_, gp) = layer.backward(&cache, &g).unwrap();
        let expected = [1.5, -3.0, 6.0, -1.0, 2.0, -4.0];
        assert_eq!(gp[0].data(), &expected);
        assert_eq!(gp[1].data(), &[3.0, -2.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let layer = Layer::<f32>::dense(4, 2);
        let x = Tensor::zeros(&[1, 3]);
        let err = layer.forward(&x).unwrap_err().to_string();
        assert!(err.contains("[1, 4]") && err.contains("[1, 3]"), "{err}");
    }

    #[test]
    fn backward_with_wrong_cache_is_an_error() {
        let layer = Layer::<f32>::dense(2, 2);
        let g = Tensor::zeros(&[1, 2]);
        let cache = Cache::InputShape(vec![1, 2]);
        assert!(matches!(layer.backward(&cache, &g), Err(SimexError::MissingCache(_))));
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let mut layer = Layer::<f64>::dense(400, 120);
        layer.init_params(&mut RngStream::new(9));
        let bound = (6.0f64 / 520.0).sqrt();
        assert!((bound - 0.10742).abs() < 1e-5);
        if let Layer::Dense(d) = &layer {
            assert!(d.weight.data().iter().all(|w| w.abs() <= bound));
            assert!(d.bias.data().iter().all(|&b| b == 0.0));
        }
        let mut again = Layer::<f64>::dense(400, 120);
        again.init_params(&mut RngStream::new(9));
        assert_eq!(layer, again);
    }

    #[test]
    fn upsample_with_target_extends_edge() {
        let layer = Layer::<f64>::Upsample2 { target: Some((5, 4)) };
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let (y, cache) = layer.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5, 4]);
        assert_eq!(&y.data()[16..20], &[3., 3., 4., 4.]);
        let g = Tensor::filled(&[1, 1, 5, 4], 1.0);
        let (gi, _) = layer.backward(&cache, &g).unwrap();
        assert_eq!(gi.data(), &[4., 4., 6., 6.]);
    }
}
