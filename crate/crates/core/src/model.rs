//! Parameterized sequential networks built from a [`ModelSpec`].

use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{self, backward_inner};
use crate::nn::{glorot_uniform, ActivationKind, LayerCache, Param, ParamGrads, Scalar, Tensor};
use crate::zoo::{LayerSpec, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct LayerParams<T: Scalar> {
    pub weights: Param<T>,
    pub bias: Param<T>,
}

/// Result of a training-mode forward pass.
pub struct ForwardPass<T: Scalar> {
    pub output: Tensor<T>,
    caches: Vec<(usize, LayerCache<T>)>,
}

pub struct BackwardPass<T: Scalar> {
    /// Gradient w.r.t. the model input, when requested.
    pub input: Option<Tensor<T>>,
    /// One entry per layer; `Some` for parametric layers (zeros when frozen).
    pub grads: Vec<Option<ParamGrads<T>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct Model<T: Scalar = f32> {
    spec: ModelSpec,
    params: Vec<Option<LayerParams<T>>>,
    trained: bool,
}

impl<T: Scalar> Model<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut input = spec.input_shape.clone();
        let shapes = spec.shapes()?;
        let mut params = Vec::with_capacity(spec.layers.len());
        for (layer, out) in spec.layers.iter().zip(&shapes) {
            params.push(layer.param_shapes(&input).map(|(w, b)| LayerParams {
                weights: Arc::new(glorot_uniform(&w, rng)),
                bias: Arc::new(Tensor::zeros(&b)),
            }));
            input = out.clone();
        }
        Ok(Self { spec, params, trained: false })
    }

    /// Assemble a model from a spec and explicit parameters.
    pub fn from_parts(spec: ModelSpec, params: Vec<Option<LayerParams<T>>>, trained: bool) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter slots for {} layers",
                params.len(),
                spec.layers.len()
            )));
        }
        let mut input = spec.input_shape.clone();
        for ((layer, out), p) in spec.layers.iter().zip(spec.shapes()?).zip(&params) {
            match (layer.param_shapes(&input), p) {
                (Some((w, b)), Some(p)) => {
                    p.weights.expect_shape(&w)?;
                    p.bias.expect_shape(&b)?;
                }
                (None, None) => {}
                _ => return Err(Error::ShapeMismatch(format!("parameter slot mismatch at {} layer", layer.kind()))),
            }
            input = out;
        }
        Ok(Self { spec, params, trained })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Option<LayerParams<T>>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Option<LayerParams<T>>] {
        &mut self.params
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.spec.output_shape().expect("validated at construction")
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn set_frozen_prefix(&mut self, n: usize) {
        self.spec.frozen_prefix = n.min(self.spec.layers.len());
    }

    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weights.len() + p.bias.len())
            .sum()
    }

    /// True when the last layer applies softmax, i.e. outputs are class probabilities.
    pub fn ends_with_softmax(&self) -> bool {
        matches!(
            self.spec.layers.last(),
            Some(LayerSpec::Dense { activation: Some(ActivationKind::Softmax), .. })
                | Some(LayerSpec::Conv2d { activation: Some(ActivationKind::Softmax), .. })
                | Some(LayerSpec::Activation { activation: ActivationKind::Softmax })
        )
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape() != self.spec.input_shape.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "model expects input {:?}, got {:?}",
                self.spec.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    fn run<R: Rng + ?Sized>(
        &self,
        x: &Tensor<T>,
        mut rng: Option<&mut R>,
        skip_final_softmax: bool,
        mut keep: impl FnMut(usize, LayerCache<T>),
    ) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let last = self.spec.layers.len().wrapping_sub(1);
        let mut cur = x.clone();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let skip_act = skip_final_softmax && i == last;
            let (out, cache) = match *layer {
                LayerSpec::Conv2d { stride, padding, activation, .. } => {
                    let p = self.params[i].as_ref().expect("conv has parameters");
                    let (y, c) = layers::conv2d(&cur, &p.weights, &p.bias, stride, padding)?;
                    keep(i, c);
                    match activation {
                        Some(kind) if !(skip_act && kind == ActivationKind::Softmax) => layers::activation(&y, kind)?,
                        _ => {
                            cur = y;
                            continue;
                        }
                    }
                }
                LayerSpec::Dense { activation, .. } => {
                    let p = self.params[i].as_ref().expect("dense has parameters");
                    let (y, c) = layers::dense(&cur, &p.weights, &p.bias)?;
                    keep(i, c);
                    match activation {
                        Some(kind) if !(skip_act && kind == ActivationKind::Softmax) => layers::activation(&y, kind)?,
                        _ => {
                            cur = y;
                            continue;
                        }
                    }
                }
                LayerSpec::Maxpool { pool, stride } => layers::maxpool2d(&cur, pool, stride)?,
                LayerSpec::Upsample { factor } => layers::upsample2d(&cur, factor)?,
                LayerSpec::Activation { activation } => {
                    if skip_act && activation == ActivationKind::Softmax {
                        continue;
                    }
                    layers::activation(&cur, activation)?
                }
                LayerSpec::Dropout { rate } => match rng.as_deref_mut() {
                    Some(r) => layers::dropout(&cur, rate, r, true)?,
                    None => {
                        continue;
                    }
                },
                LayerSpec::Flatten => layers::flatten(&cur)?,
            };
            keep(i, cache);
            cur = out;
        }
        Ok(cur)
    }

    /// Inference-mode forward pass (dropout is identity).
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run::<rand::rngs::ThreadRng>(x, None, false, |_, _| {})
    }

    /// Inference-mode class prediction (argmax of the output).
    pub fn predict(&self, x: &Tensor<T>) -> Result<usize> {
        Ok(self.forward(x)?.argmax())
    }

    /// Training-mode forward pass keeping caches. With `logits`, a terminal
    /// softmax is skipped so the output can feed the cross-entropy loss.
    pub fn forward_train<R: Rng + ?Sized>(&self, x: &Tensor<T>, rng: &mut R, logits: bool) -> Result<ForwardPass<T>> {
        let mut caches = Vec::with_capacity(self.spec.layers.len() + 4);
        let output = self.run(x, Some(rng), logits, |i, c| caches.push((i, c)))?;
        Ok(ForwardPass { output, caches })
    }

    /// Back-propagate `upstream` through the cached pass. Frozen layers receive zero gradients.
    pub fn backward(&self, pass: ForwardPass<T>, upstream: &Tensor<T>, need_input: bool) -> Result<BackwardPass<T>> {
        let n = self.spec.layers.len();
        let mut grads: Vec<Option<ParamGrads<T>>> = vec![None; n];
        let first_trainable = (self.spec.frozen_prefix..n).find(|&i| self.spec.layers[i].is_parametric());
        let stop = if need_input { 0 } else { first_trainable.unwrap_or(n) };

        let mut g = upstream.clone();
        let mut input_grad = None;
        let caches = pass.caches;
        if caches.is_empty() && n > 0 {
            return Err(Error::MissingCache);
        }
        for (layer, cache) in caches.into_iter().rev() {
            if layer < stop {
                break;
            }
            let is_param_op = matches!(cache, LayerCache::Conv2d { .. } | LayerCache::Dense { .. });
            let lowest = layer == stop && is_param_op;
            let need = !lowest || need_input;
            let (dx, pg) = backward_inner(cache, &g, need)?;
            if let Some(pg) = pg {
                grads[layer] = Some(if self.spec.is_frozen(layer) { zeros_like(&pg) } else { pg });
            }
            match dx {
                Some(dx) => g = dx,
                None => break,
            }
        }
        if need_input {
            input_grad = Some(g);
        }
        for (slot, p) in grads.iter_mut().zip(&self.params) {
            if let (None, Some(p)) = (&slot, p) {
                *slot = Some(ParamGrads { weights: Tensor::zeros(p.weights.shape()), bias: Tensor::zeros(p.bias.shape()) });
            }
        }
        Ok(BackwardPass { input: input_grad, grads })
    }

    /// Split into `[0, layer)` and `[layer, n)` as standalone models.
    pub fn split_at(&self, layer: usize) -> Result<(Model<T>, Model<T>)> {
        if layer > self.spec.layers.len() {
            return Err(Error::Config(format!("split point {layer} beyond {} layers", self.spec.layers.len())));
        }
        let mid_shape = if layer == 0 { self.spec.input_shape.clone() } else { self.spec.shapes()?[layer - 1].clone() };
        let mut head = ModelSpec::new(self.spec.role, &self.spec.input_shape, self.spec.layers[..layer].to_vec());
        head.frozen_prefix = self.spec.frozen_prefix.min(layer);
        let mut tail = ModelSpec::new(self.spec.role, &mid_shape, self.spec.layers[layer..].to_vec());
        tail.frozen_prefix = self.spec.frozen_prefix.saturating_sub(layer);
        Ok((
            Model::from_parts(head, self.params[..layer].to_vec(), self.trained)?,
            Model::from_parts(tail, self.params[layer..].to_vec(), self.trained)?,
        ))
    }

    /// Hash of every parameter bit pattern, for cheap weight-identity checks.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::hash::DefaultHasher::new();
        for p in self.params.iter().flatten() {
            for v in p.weights.data().iter().chain(p.bias.data()) {
                v.as_f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn all_params_finite(&self) -> bool {
        self.params.iter().flatten().all(|p| p.weights.all_finite() && p.bias.all_finite())
    }
}

fn zeros_like<T: Scalar>(g: &ParamGrads<T>) -> ParamGrads<T> {
    ParamGrads { weights: Tensor::zeros(g.weights.shape()), bias: Tensor::zeros(g.bias.shape()) }
}

impl Model<f32> {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_parts(m.spec, m.params, m.trained)
    }
}
