//! Per-layer forward and backward passes for sequential networks.
//!
//! Images use HxWxC layout, convolution kernels KxKxCxF, dense weights NxM.
//! Each forward call returns a [`LayerCache`] that [`backward`] consumes by value.

use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Shared parameter tensor. Caches hold a clone of the handle instead of the data.
pub type Param<T> = Arc<Tensor<T>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Sigmoid,
    Softmax,
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Self::Relu),
            "sigmoid" => Ok(Self::Sigmoid),
            "softmax" => Ok(Self::Softmax),
            _ => Err(Error::UnknownActivation(s.to_string())),
        }
    }
}

/// Spatial geometry of a convolution: output extent and the top/left padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn conv_axis(extent: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    if stride == 0 || kernel == 0 {
        return None;
    }
    match padding {
        Padding::Valid => (kernel <= extent).then(|| ((extent - kernel) / stride + 1, 0)),
        Padding::Same => {
            let out = extent.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(extent);
            Some((out, total / 2))
        }
    }
}

pub fn conv_geometry(
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeometry> {
    match (conv_axis(h, kernel, stride, padding), conv_axis(w, kernel, stride, padding)) {
        (Some((out_h, pad_top)), Some((out_w, pad_left))) if out_h >= 1 && out_w >= 1 => {
            Ok(ConvGeometry { out_h, out_w, pad_top, pad_left })
        }
        _ => Err(Error::InvalidGeometry {
            layer: None,
            reason: format!("{kernel}x{kernel} kernel, stride {stride}, {padding:?} padding on {h}x{w} input"),
        }),
    }
}

pub fn pool_extent(extent: usize, pool: usize, stride: usize) -> Option<usize> {
    (pool >= 1 && stride >= 1 && pool <= extent).then(|| (extent - pool) / stride + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T: Scalar> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// State saved by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache<T: Scalar> {
    Conv2d {
        input: Tensor<T>,
        weights: Param<T>,
        stride: usize,
        geometry: ConvGeometry,
    },
    MaxPool {
        input_shape: Vec<usize>,
        output_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Upsample {
        input_shape: Vec<usize>,
        factor: usize,
    },
    Dense {
        input: Tensor<T>,
        weights: Param<T>,
    },
    Activation {
        kind: ActivationKind,
        input: Tensor<T>,
        output: Tensor<T>,
    },
    Dropout {
        shape: Vec<usize>,
        /// Per-element multiplier (0 or 1/(1-rate)); `None` when the pass was identity.
        mask: Option<Vec<T>>,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
}

impl<T: Scalar> LayerCache<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Conv2d { .. } => "conv2d",
            Self::MaxPool { .. } => "maxpool",
            Self::Upsample { .. } => "upsample",
            Self::Dense { .. } => "dense",
            Self::Activation { .. } => "activation",
            Self::Dropout { .. } => "dropout",
            Self::Flatten { .. } => "flatten",
        }
    }

    fn output_shape(&self) -> Vec<usize> {
        match self {
            Self::Conv2d { weights, geometry, .. } => {
                vec![geometry.out_h, geometry.out_w, weights.shape()[3]]
            }
            Self::MaxPool { output_shape, .. } => output_shape.clone(),
            Self::Upsample { input_shape, factor } => {
                vec![input_shape[0] * factor, input_shape[1] * factor, input_shape[2]]
            }
            Self::Dense { weights, .. } => vec![weights.shape()[1]],
            Self::Activation { output, .. } => output.shape().to_vec(),
            Self::Dropout { shape, .. } => shape.clone(),
            Self::Flatten { input_shape } => vec![input_shape.iter().product()],
        }
    }
}

pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Param<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, LayerCache<T>)> {
    let (h, w, c) = input.hwc()?;
    let [k, k2, wc, f] = weights.shape()[..] else {
        return Err(Error::ShapeMismatch(format!("conv weights must be KxKxCxF, got {:?}", weights.shape())));
    };
    if k != k2 {
        return Err(Error::ShapeMismatch(format!("conv kernel must be square, got {k}x{k2}")));
    }
    if wc != c {
        return Err(Error::ShapeMismatch(format!("conv expects {wc} input channels, input has {c}")));
    }
    bias.expect_shape(&[f])?;
    let geo = conv_geometry(h, w, k, stride, padding)?;
    let (oh, ow) = (geo.out_h, geo.out_w);

    let x = input.data();
    let wd = weights.data();
    let mut out = vec![T::zero(); oh * ow * f];
    for oi in 0..oh {
        for oj in 0..ow {
            let acc = &mut out[(oi * ow + oj) * f..][..f];
            acc.copy_from_slice(bias.data());
            for ki in 0..k {
                let Some(ii) = (oi * stride + ki).checked_sub(geo.pad_top).filter(|&i| i < h) else {
                    continue;
                };
                for kj in 0..k {
                    let Some(jj) = (oj * stride + kj).checked_sub(geo.pad_left).filter(|&j| j < w) else {
                        continue;
                    };
                    let xs = &x[(ii * w + jj) * c..][..c];
                    let wbase = (ki * k + kj) * c * f;
                    for (ci, &xv) in xs.iter().enumerate() {
                        if xv == T::zero() {
                            continue;
                        }
                        let wrow = &wd[wbase + ci * f..][..f];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += xv * wv;
                        }
                    }
                }
            }
        }
    }
    let output = Tensor::new(vec![oh, ow, f], out)?;
    let cache = LayerCache::Conv2d { input: input.clone(), weights: Arc::clone(weights), stride, geometry: geo };
    Ok((output, cache))
}

fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    geo: ConvGeometry,
    upstream: &Tensor<T>,
    need_input: bool,
) -> (Option<Tensor<T>>, ParamGrads<T>) {
    let (h, w, c) = input.hwc().expect("conv cache holds an HxWxC input");
    let (k, f) = (weights.shape()[0], weights.shape()[3]);
    let (oh, ow) = (geo.out_h, geo.out_w);
    let x = input.data();
    let wd = weights.data();
    let g = upstream.data();

    let mut dw = vec![T::zero(); wd.len()];
    let mut db = vec![T::zero(); f];
    let mut dx = if need_input { vec![T::zero(); x.len()] } else { Vec::new() };

    for oi in 0..oh {
        for oj in 0..ow {
            let gs = &g[(oi * ow + oj) * f..][..f];
            for (b, &gv) in db.iter_mut().zip(gs) {
                *b += gv;
            }
            for ki in 0..k {
                let Some(ii) = (oi * stride + ki).checked_sub(geo.pad_top).filter(|&i| i < h) else {
                    continue;
                };
                for kj in 0..k {
                    let Some(jj) = (oj * stride + kj).checked_sub(geo.pad_left).filter(|&j| j < w) else {
                        continue;
                    };
                    let xoff = (ii * w + jj) * c;
                    let wbase = (ki * k + kj) * c * f;
                    for ci in 0..c {
                        let xv = x[xoff + ci];
                        let woff = wbase + ci * f;
                        if xv != T::zero() {
                            for (d, &gv) in dw[woff..woff + f].iter_mut().zip(gs) {
                                *d += xv * gv;
                            }
                        }
                        if need_input {
                            let mut s = T::zero();
                            for (&wv, &gv) in wd[woff..woff + f].iter().zip(gs) {
                                s += wv * gv;
                            }
                            dx[xoff + ci] += s;
                        }
                    }
                }
            }
        }
    }
    let grads = ParamGrads {
        weights: Tensor::new(weights.shape().to_vec(), dw).expect("same shape as weights"),
        bias: Tensor::new(vec![f], db).expect("one bias per filter"),
    };
    let dx = need_input.then(|| Tensor::new(input.shape().to_vec(), dx).expect("same shape as input"));
    (dx, grads)
}

pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, pool: usize, stride: usize) -> Result<(Tensor<T>, LayerCache<T>)> {
    let (h, w, c) = input.hwc()?;
    let (Some(oh), Some(ow)) = (pool_extent(h, pool, stride), pool_extent(w, pool, stride)) else {
        return Err(Error::InvalidGeometry {
            layer: None,
            reason: format!("{pool}x{pool} pool, stride {stride} on {h}x{w} input"),
        });
    };
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for oi in 0..oh {
        for oj in 0..ow {
            for ch in 0..c {
                let mut best_idx = ((oi * stride) * w + oj * stride) * c + ch;
                let mut best = x[best_idx];
                for pi in 0..pool {
                    for pj in 0..pool {
                        let idx = ((oi * stride + pi) * w + oj * stride + pj) * c + ch;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    let output_shape = vec![oh, ow, c];
    let output = Tensor::new(output_shape.clone(), out)?;
    Ok((output, LayerCache::MaxPool { input_shape: input.shape().to_vec(), output_shape, argmax }))
}

pub fn upsample2d<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<(Tensor<T>, LayerCache<T>)> {
    let (h, w, c) = input.hwc()?;
    if factor == 0 {
        return Err(Error::InvalidGeometry { layer: None, reason: "upsample factor must be >= 1".into() });
    }
    let (oh, ow) = (h * factor, w * factor);
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    for i in 0..oh {
        for j in 0..ow {
            let src = ((i / factor) * w + j / factor) * c;
            out.extend_from_slice(&x[src..src + c]);
        }
    }
    let output = Tensor::new(vec![oh, ow, c], out)?;
    Ok((output, LayerCache::Upsample { input_shape: input.shape().to_vec(), factor }))
}

pub fn dense<T: Scalar>(input: &Tensor<T>, weights: &Param<T>, bias: &Tensor<T>) -> Result<(Tensor<T>, LayerCache<T>)> {
    let [n, m] = weights.shape()[..] else {
        return Err(Error::ShapeMismatch(format!("dense weights must be NxM, got {:?}", weights.shape())));
    };
    input.expect_shape(&[n])?;
    bias.expect_shape(&[m])?;
    let wd = weights.data();
    let mut out = bias.data().to_vec();
    for (i, &xv) in input.data().iter().enumerate() {
        if xv == T::zero() {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(&wd[i * m..(i + 1) * m]) {
            *o += xv * wv;
        }
    }
    let output = Tensor::new(vec![m], out)?;
    Ok((output, LayerCache::Dense { input: input.clone(), weights: Arc::clone(weights) }))
}

fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    upstream: &Tensor<T>,
    need_input: bool,
) -> (Option<Tensor<T>>, ParamGrads<T>) {
    let (n, m) = (weights.shape()[0], weights.shape()[1]);
    let g = upstream.data();
    let wd = weights.data();
    let mut dw = vec![T::zero(); n * m];
    for (i, &xv) in input.data().iter().enumerate() {
        if xv == T::zero() {
            continue;
        }
        for (d, &gv) in dw[i * m..(i + 1) * m].iter_mut().zip(g) {
            *d = xv * gv;
        }
    }
    let dx = need_input.then(|| {
        let data = (0..n)
            .map(|i| wd[i * m..(i + 1) * m].iter().zip(g).map(|(&wv, &gv)| wv * gv).sum())
            .collect();
        Tensor::new(vec![n], data).expect("dense input is rank one")
    });
    let grads = ParamGrads {
        weights: Tensor::new(vec![n, m], dw).expect("NxM"),
        bias: upstream.clone(),
    };
    (dx, grads)
}

pub fn softmax_rows<T: Scalar>(data: &mut [T], row: usize) {
    for r in data.chunks_mut(row) {
        let max = r.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in r.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in r.iter_mut() {
            *v = *v / sum;
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn activation<T: Scalar>(input: &Tensor<T>, kind: ActivationKind) -> Result<(Tensor<T>, LayerCache<T>)> {
    let output = match kind {
        ActivationKind::Relu => input.map(|x| x.max(T::zero())),
        ActivationKind::Sigmoid => input.map(sigmoid),
        ActivationKind::Softmax => {
            let mut out = input.clone();
            let row = *input.shape().last().expect("tensors have rank >= 1");
            softmax_rows(out.data_mut(), row);
            out
        }
    };
    let cache = LayerCache::Activation { kind, input: input.clone(), output: output.clone() };
    Ok((output, cache))
}

/// Inverted dropout: survivors are scaled by `1/(1-rate)` so inference is identity.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor<T>, LayerCache<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidGeometry { layer: None, reason: format!("dropout rate {rate} outside [0, 1)") });
    }
    let shape = input.shape().to_vec();
    if !training || rate == 0.0 {
        return Ok((input.clone(), LayerCache::Dropout { shape, mask: None }));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    let output = Tensor::new(shape.clone(), data)?;
    Ok((output, LayerCache::Dropout { shape, mask: Some(mask) }))
}

pub fn flatten<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, LayerCache<T>)> {
    let output = input.clone().reshape(&[input.len()])?;
    Ok((output, LayerCache::Flatten { input_shape: input.shape().to_vec() }))
}

/// Chain-rule step through one layer: returns the input gradient and, for
/// parametric layers, the weight and bias gradients.
pub fn backward<T: Scalar>(
    cache: LayerCache<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Option<ParamGrads<T>>)> {
    let (dx, grads) = backward_inner(cache, upstream, true)?;
    Ok((dx.expect("input gradient requested"), grads))
}

/// Input gradient (when requested) and parameter gradients of one layer.
pub(crate) type LayerGrads<T> = (Option<Tensor<T>>, Option<ParamGrads<T>>);

pub(crate) fn backward_inner<T: Scalar>(
    cache: LayerCache<T>,
    upstream: &Tensor<T>,
    need_input: bool,
) -> Result<LayerGrads<T>> {
    let expected = cache.output_shape();
    if upstream.shape() != expected.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "{} backward expects upstream {expected:?}, got {:?}",
            cache.kind(),
            upstream.shape()
        )));
    }
    let g = upstream.data();
    Ok(match cache {
        LayerCache::Conv2d { input, weights, stride, geometry } => {
            let (dx, grads) = conv2d_backward(&input, &weights, stride, geometry, upstream, need_input);
            (dx, Some(grads))
        }
        LayerCache::Dense { input, weights } => {
            let (dx, grads) = dense_backward(&input, &weights, upstream, need_input);
            (dx, Some(grads))
        }
        LayerCache::MaxPool { input_shape, argmax, .. } => {
            let mut dx = Tensor::zeros(&input_shape);
            let d = dx.data_mut();
            for (&idx, &gv) in argmax.iter().zip(g) {
                d[idx] += gv;
            }
            (Some(dx), None)
        }
        LayerCache::Upsample { input_shape, factor } => {
            let (h, w, c) = (input_shape[0], input_shape[1], input_shape[2]);
            let ow = w * factor;
            let mut dx = Tensor::zeros(&input_shape);
            let d = dx.data_mut();
            for i in 0..h * factor {
                for j in 0..ow {
                    let src = ((i / factor) * w + j / factor) * c;
                    let up = (i * ow + j) * c;
                    for ch in 0..c {
                        d[src + ch] += g[up + ch];
                    }
                }
            }
            (Some(dx), None)
        }
        LayerCache::Activation { kind, input, output } => {
            let y = output.data();
            let data: Vec<T> = match kind {
                ActivationKind::Relu => {
                    input.data().iter().zip(g).map(|(&x, &gv)| if x > T::zero() { gv } else { T::zero() }).collect()
                }
                ActivationKind::Sigmoid => y.iter().zip(g).map(|(&yv, &gv)| gv * yv * (T::one() - yv)).collect(),
                ActivationKind::Softmax => {
                    let row = *output.shape().last().expect("rank >= 1");
                    let mut out = Vec::with_capacity(y.len());
                    for (yr, gr) in y.chunks(row).zip(g.chunks(row)) {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        out.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                    }
                    out
                }
            };
            (Some(Tensor::new(output.shape().to_vec(), data)?), None)
        }
        LayerCache::Dropout { shape, mask } => {
            let dx = match mask {
                None => upstream.clone(),
                Some(mask) => Tensor::new(shape, g.iter().zip(&mask).map(|(&gv, &m)| gv * m).collect())?,
            };
            (Some(dx), None)
        }
        LayerCache::Flatten { input_shape } => (Some(upstream.clone().reshape(&input_shape)?), None),
    })
}
