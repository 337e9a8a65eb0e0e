//! The layer set used by the U-Net/W-Net builders: 3x3 same convolution,
//! ReLU, 2x2 max-pooling, 2x nearest up-sampling, channel concatenation,
//! global average pooling, a dense layer and softmax cross-entropy.
//!
//! Feature maps are `[C, H, W]` tensors. Each layer has a forward function
//! here and the matching backward kernel used by the autodiff tape.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const KERNEL: usize = 3;

/// Weights `[out, in, 3, 3]` and bias `[out]` of a same-padded convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> ConvParams<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        check_conv_params(&weights, &bias)?;
        Ok(ConvParams { weights, bias })
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }
}

fn check_conv_params<T: Element>(weights: &Tensor<T>, bias: &Tensor<T>) -> Result<()> {
    let ws = weights.shape();
    if ws.len() != 4 || ws[2] != KERNEL || ws[3] != KERNEL {
        return Err(Error::Shape(format!(
            "conv weights must be [out, in, 3, 3], got {ws:?}"
        )));
    }
    if bias.shape() != [ws[0]] {
        return Err(Error::Shape(format!(
            "conv bias must be [{}], got {:?}",
            ws[0],
            bias.shape()
        )));
    }
    Ok(())
}

/// Weights `[out, in]` and bias `[out]` of a fully connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> DenseParams<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        check_dense_params(&weights, &bias)?;
        Ok(DenseParams { weights, bias })
    }

    pub fn in_units(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_units(&self) -> usize {
        self.weights.shape()[0]
    }
}

fn check_dense_params<T: Element>(weights: &Tensor<T>, bias: &Tensor<T>) -> Result<()> {
    let ws = weights.shape();
    if ws.len() != 2 {
        return Err(Error::Shape(format!("dense weights must be [out, in], got {ws:?}")));
    }
    if bias.shape() != [ws[0]] {
        return Err(Error::Shape(format!(
            "dense bias must be [{}], got {:?}",
            ws[0],
            bias.shape()
        )));
    }
    Ok(())
}

/// `(C, H, W)` of a feature map.
pub fn chw<T: Element>(t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::Shape(format!("expected a [C, H, W] feature map, got {s:?}"))),
    }
}

/// Row ranges for a kernel tap at offset `d` in `-1..=1`: output rows `lo..hi`
/// read input rows `lo + d .. hi + d`.
#[inline]
fn tap_range(d: isize, n: usize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { n - d as usize } else { n };
    (lo, hi.max(lo))
}

pub(crate) fn conv2d_forward<T: Element>(
    input: &[T],
    (cin, h, w): (usize, usize, usize),
    weights: &[T],
    bias: &[T],
    cout: usize,
) -> Vec<T> {
    let plane = h * w;
    let mut out = vec![T::zero(); cout * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            let kern = &weights[(o * cin + i) * 9..(o * cin + i + 1) * 9];
            for ky in 0..KERNEL {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..KERNEL {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(dx, w);
                    let k = kern[ky * KERNEL + kx];
                    if k == T::zero() {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let d = &mut dst[y * w + x0..y * w + x1];
                        let s0 = (x0 as isize + dx) as usize;
                        let s = &src[sy * w + s0..sy * w + s0 + (x1 - x0)];
                        for (a, &b) in d.iter_mut().zip(s) {
                            *a += k * b;
                        }
                    }
                }
            }
        }
    });
    out
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub(crate) fn conv2d_backward<T: Element>(
    input: &[T],
    (cin, h, w): (usize, usize, usize),
    weights: &[T],
    cout: usize,
    grad_out: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let plane = h * w;

    let mut grad_in = vec![T::zero(); cin * plane];
    grad_in.par_chunks_mut(plane).enumerate().for_each(|(i, dst)| {
        for o in 0..cout {
            let g = &grad_out[o * plane..(o + 1) * plane];
            let kern = &weights[(o * cin + i) * 9..(o * cin + i + 1) * 9];
            for ky in 0..KERNEL {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..KERNEL {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(dx, w);
                    let k = kern[ky * KERNEL + kx];
                    if k == T::zero() {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s0 = (x0 as isize + dx) as usize;
                        let d = &mut dst[sy * w + s0..sy * w + s0 + (x1 - x0)];
                        let gs = &g[y * w + x0..y * w + x1];
                        for (a, &b) in d.iter_mut().zip(gs) {
                            *a += k * b;
                        }
                    }
                }
            }
        }
    });

    let mut grad_w = vec![T::zero(); cout * cin * 9];
    grad_w.par_chunks_mut(cin * 9).enumerate().for_each(|(o, dst)| {
        let g = &grad_out[o * plane..(o + 1) * plane];
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..KERNEL {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..KERNEL {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(dx, w);
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s0 = (x0 as isize + dx) as usize;
                        let s = &src[sy * w + s0..sy * w + s0 + (x1 - x0)];
                        let gs = &g[y * w + x0..y * w + x1];
                        acc += s.iter().zip(gs).map(|(&a, &b)| a * b).sum::<T>();
                    }
                    dst[i * 9 + ky * KERNEL + kx] = acc;
                }
            }
        }
    });

    let grad_b = grad_out
        .chunks(plane)
        .map(|g| g.iter().copied().sum::<T>())
        .collect();
    (grad_in, grad_w, grad_b)
}

/// Zero-padded 3x3 convolution; output keeps the input's spatial size.
pub fn conv2d_same<T: Element>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(input)?;
    check_conv_params(&params.weights, &params.bias)?;
    if c != params.in_channels() {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {c}",
            params.in_channels()
        )));
    }
    let cout = params.out_channels();
    let out = conv2d_forward(input.data(), (c, h, w), params.weights.data(), params.bias.data(), cout);
    Tensor::new(&[cout, h, w], out)
}

pub fn relu<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

pub(crate) fn maxpool_forward<T: Element>(input: &[T], (c, h, w): (usize, usize, usize)) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

/// 2x2 max-pooling with stride 2. Also returns, for each output element, the
/// flat input index it was taken from (first maximum in row-major window
/// order on ties).
pub fn maxpool2x2<T: Element>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = chw(input)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "max-pooling needs even spatial dims, got {h}x{w}"
        )));
    }
    let (out, argmax) = maxpool_forward(input.data(), (c, h, w));
    Ok((Tensor::new(&[c, h / 2, w / 2], out)?, argmax))
}

pub(crate) fn upsample_forward<T: Element>(input: &[T], (c, h, w): (usize, usize, usize)) -> Vec<T> {
    let ow = 2 * w;
    let mut out = vec![T::zero(); c * 4 * h * w];
    for ch in 0..c {
        for y in 0..h {
            let src = &input[(ch * h + y) * w..(ch * h + y + 1) * w];
            let row = (ch * 2 * h + 2 * y) * ow;
            for (x, &v) in src.iter().enumerate() {
                out[row + 2 * x] = v;
                out[row + 2 * x + 1] = v;
            }
            let (top, bottom) = out.split_at_mut(row + ow);
            bottom[..ow].copy_from_slice(&top[row..row + ow]);
        }
    }
    out
}

pub(crate) fn upsample_backward<T: Element>(grad_out: &[T], (c, h, w): (usize, usize, usize)) -> Vec<T> {
    let ow = 2 * w;
    let mut g = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let r0 = (ch * 2 * h + 2 * y) * ow + 2 * x;
                let r1 = r0 + ow;
                g[(ch * h + y) * w + x] = grad_out[r0] + grad_out[r0 + 1] + grad_out[r1] + grad_out[r1 + 1];
            }
        }
    }
    g
}

/// Nearest-neighbour 2x up-sampling: every input element fills a 2x2 block.
pub fn upsample2x<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(input)?;
    Tensor::new(&[c, 2 * h, 2 * w], upsample_forward(input.data(), (c, h, w)))
}

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ca, ha, wa) = chw(a)?;
    let (cb, hb, wb) = chw(b)?;
    if (ha, wa) != (hb, wb) {
        return Err(Error::Shape(format!(
            "cannot concatenate {ha}x{wa} and {hb}x{wb} feature maps"
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(&[ca + cb, ha, wa], data)
}

/// Splits off the first `channels` channels; inverse of [`concat_channels`].
pub fn split_channels<T: Element>(t: &Tensor<T>, channels: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c, h, w) = chw(t)?;
    if channels == 0 || channels >= c {
        return Err(Error::Shape(format!("cannot split {c} channels at {channels}")));
    }
    let cut = channels * h * w;
    Ok((
        Tensor::new(&[channels, h, w], t.data()[..cut].to_vec())?,
        Tensor::new(&[c - channels, h, w], t.data()[cut..].to_vec())?,
    ))
}

/// Per-channel spatial mean, `[C, H, W] -> [C]`.
pub fn global_avg_pool<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(input)?;
    let n = T::from_f64((h * w) as f64);
    let data = input.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() / n).collect();
    Tensor::new(&[c], data)
}

pub(crate) fn dense_forward<T: Element>(x: &[T], weights: &[T], bias: &[T]) -> Vec<T> {
    let n = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| b + weights[o * n..(o + 1) * n].iter().zip(x).map(|(&a, &v)| a * v).sum::<T>())
        .collect()
}

/// `W x + b`.
pub fn dense<T: Element>(input: &Tensor<T>, params: &DenseParams<T>) -> Result<Tensor<T>> {
    check_dense_params(&params.weights, &params.bias)?;
    if input.shape() != [params.in_units()] {
        return Err(Error::Shape(format!(
            "dense layer expects [{}], got {:?}",
            params.in_units(),
            input.shape()
        )));
    }
    let out = dense_forward(input.data(), params.weights.data(), params.bias.data());
    Tensor::new(&[params.out_units()], out)
}

/// Softmax with the largest logit subtracted first.
pub fn softmax<T: Element>(logits: &Tensor<T>) -> Tensor<T> {
    let max = logits.data().iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.data().iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Tensor::new(logits.shape(), exps.into_iter().map(|e| e / total).collect()).expect("same shape")
}

/// Categorical cross-entropy of a `[K]` logit vector against class `target`.
/// Returns the loss `-ln p[target]` and the probabilities; the gradient with
/// respect to the logits is `p - onehot(target)`.
pub fn softmax_cross_entropy<T: Element>(logits: &Tensor<T>, target: usize) -> Result<(T, Tensor<T>)> {
    if logits.ndim() != 1 {
        return Err(Error::Shape(format!("logits must be 1-d, got {:?}", logits.shape())));
    }
    let k = logits.len();
    if target >= k {
        return Err(Error::Usage(format!("target class {target} out of range for {k} classes")));
    }
    let z = logits.data();
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let log_total = z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    let loss = log_total - (z[target] - max);
    Ok((loss, softmax(logits)))
}
