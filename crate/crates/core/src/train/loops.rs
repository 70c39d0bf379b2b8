use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::augment::{augment, AugmentPolicy};
use super::config::{TrainConfig, TrainHistory};
use super::dataset::{Content, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{LayerParams, Model};
use crate::nn::{cross_entropy_loss, glorot_uniform, mse_loss, OptimizerConfig, OptimizerState, ParamGrads, Tensor};
use crate::zoo::{build_transfer_model, AutoencoderSpec, LayerSpec, ModelSpec, Role};

/// Per-parameter optimizer accumulators for one model.
struct ModelOptimizer {
    states: Vec<Option<(OptimizerState<f32>, OptimizerState<f32>)>>,
}

impl ModelOptimizer {
    fn new(model: &Model, config: OptimizerConfig) -> Self {
        let states = model
            .params()
            .iter()
            .map(|p| {
                p.as_ref().map(|p| {
                    (OptimizerState::new(config, p.weights.shape()), OptimizerState::new(config, p.bias.shape()))
                })
            })
            .collect();
        Self { states }
    }

    /// Apply averaged gradients; frozen layers are skipped entirely.
    fn step(&mut self, model: &mut Model, grads: &mut [Option<ParamGrads<f32>>], scale: f32) -> Result<()> {
        let frozen = model.spec().frozen_prefix;
        for (i, ((slot, state), g)) in model.params_mut().iter_mut().zip(&mut self.states).zip(grads).enumerate() {
            let (Some(p), Some((ws, bs)), Some(g)) = (slot, state, g) else { continue };
            if i < frozen {
                continue;
            }
            g.weights.scale(scale);
            g.bias.scale(scale);
            ws.step(Arc::make_mut(&mut p.weights), &g.weights)?;
            bs.step(Arc::make_mut(&mut p.bias), &g.bias)?;
        }
        Ok(())
    }
}

fn accumulate(acc: &mut Vec<Option<ParamGrads<f32>>>, grads: Vec<Option<ParamGrads<f32>>>) -> Result<()> {
    if acc.is_empty() {
        *acc = grads;
        return Ok(());
    }
    for (a, g) in acc.iter_mut().zip(grads) {
        if let (Some(a), Some(g)) = (a.as_mut(), g) {
            a.weights.add_assign(&g.weights)?;
            a.bias.add_assign(&g.bias)?;
        }
    }
    Ok(())
}

fn check_loss(value: f64, epoch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch })
    }
}

fn should_stop(losses: &[f64], patience: Option<usize>) -> bool {
    let Some(p) = patience else { return false };
    if losses.len() <= p {
        return false;
    }
    let best_before = losses[..losses.len() - p].iter().copied().fold(f64::INFINITY, f64::min);
    losses[losses.len() - p..].iter().all(|&l| l >= best_before)
}

/// Encoder/decoder pair trained jointly on reconstruction error.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub encoder: Model,
    pub decoder: Model,
}

impl Autoencoder {
    pub fn init<R: Rng + ?Sized>(spec: &AutoencoderSpec, rng: &mut R) -> Result<Self> {
        Ok(Self { encoder: Model::init(spec.encoder.clone(), rng)?, decoder: Model::init(spec.decoder.clone(), rng)? })
    }

    /// A ratio-1 pair: empty models, so both halves are identities.
    pub fn is_identity(&self) -> bool {
        self.encoder.spec().layers.is_empty() && self.decoder.spec().layers.is_empty()
    }

    pub fn latent_shape(&self) -> Vec<usize> {
        self.encoder.output_shape()
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decoder.forward(&self.encoder.forward(x)?)
    }

    /// The whole autoencoder as one sequential model.
    pub fn full_model(&self) -> Result<Model> {
        let mut layers = self.encoder.spec().layers.clone();
        layers.extend(self.decoder.spec().layers.iter().cloned());
        let mut params = self.encoder.params().to_vec();
        params.extend(self.decoder.params().iter().cloned());
        let spec = ModelSpec::new(Role::Encoder, self.encoder.input_shape(), layers);
        Model::from_parts(spec, params, self.encoder.is_trained() && self.decoder.is_trained())
    }

    /// Standalone inference models for deployment: encoder on the device, decoder at the hub.
    pub fn split(self) -> Result<(Model, Model)> {
        if !(self.encoder.is_trained() && self.decoder.is_trained()) {
            return Err(Error::Untrained);
        }
        Ok((self.encoder, self.decoder))
    }
}

/// Minimize reconstruction MSE over `images` by mini-batch descent.
pub fn train_autoencoder(mut ae: Autoencoder, images: &[Tensor], cfg: &TrainConfig) -> Result<(Autoencoder, TrainHistory)> {
    let mut history = TrainHistory::default();
    if ae.is_identity() {
        for image in images {
            image.expect_shape(ae.encoder.input_shape())?;
        }
        history.losses = vec![0.0; cfg.epochs];
        history.metrics = vec![0.0; cfg.epochs];
        ae.encoder.mark_trained();
        ae.decoder.mark_trained();
        return Ok((ae, history));
    }
    if let Some(bad) = images.iter().find(|x| x.shape() != ae.encoder.input_shape()) {
        return Err(Error::ShapeMismatch(format!(
            "autoencoder expects {:?}, got {:?}",
            ae.encoder.input_shape(),
            bad.shape()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut enc_opt = ModelOptimizer::new(&ae.encoder, cfg.optimizer);
    let mut dec_opt = ModelOptimizer::new(&ae.decoder, cfg.optimizer);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let mut enc_acc = Vec::new();
            let mut dec_acc = Vec::new();
            for &i in batch {
                let x = &images[i];
                let enc_pass = ae.encoder.forward_train(x, &mut rng, false)?;
                let dec_pass = ae.decoder.forward_train(&enc_pass.output, &mut rng, false)?;
                let loss = mse_loss(&dec_pass.output, x)?;
                total += loss.value as f64;
                let dec_back = ae.decoder.backward(dec_pass, &loss.gradient, true)?;
                let latent_grad = dec_back.input.expect("requested");
                let enc_back = ae.encoder.backward(enc_pass, &latent_grad, false)?;
                accumulate(&mut dec_acc, dec_back.grads)?;
                accumulate(&mut enc_acc, enc_back.grads)?;
            }
            let scale = 1.0 / batch.len() as f32;
            dec_opt.step(&mut ae.decoder, &mut dec_acc, scale)?;
            enc_opt.step(&mut ae.encoder, &mut enc_acc, scale)?;
        }
        let mean = total / images.len().max(1) as f64;
        check_loss(mean, epoch + 1)?;
        history.losses.push(mean);
        history.metrics.push(mean);
        if should_stop(&history.losses, cfg.patience) {
            break;
        }
    }
    history.train_seconds = start.elapsed().as_secs_f64();
    if !(ae.encoder.all_params_finite() && ae.decoder.all_params_finite()) {
        return Err(Error::Divergence { epoch: history.epochs() });
    }
    ae.encoder.mark_trained();
    ae.decoder.mark_trained();
    Ok((ae, history))
}

fn check_classifier_data(model: &Model, data: &LabeledDataset) -> Result<usize> {
    let classes = model.output_shape().iter().product::<usize>();
    if let Some(shape) = data.sample_shape() {
        if shape != model.input_shape() {
            return Err(Error::ShapeMismatch(format!(
                "classifier expects {:?}, dataset holds {shape:?}",
                model.input_shape()
            )));
        }
    }
    if let Some(label) = data.labels().find(|&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(classes)
}

/// Minimize cross-entropy on `data`. Dropout is active; augmentation applies
/// only when enabled and the dataset holds raw images.
pub fn train_classifier(mut model: Model, data: &LabeledDataset, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    let classes = check_classifier_data(&model, data)?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let policy = if cfg.augment && data.content == Content::Images && model.input_shape().len() == 3 {
        AugmentPolicy::standard()
    } else {
        AugmentPolicy::DISABLED
    };
    let logits = model.ends_with_softmax();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = ModelOptimizer::new(&model, cfg.optimizer);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = Vec::new();
            for &i in batch {
                let (x, label) = &data.samples[i];
                let x = if policy.enabled { augment(x, &policy, &mut rng)? } else { x.clone() };
                let pass = model.forward_train(&x, &mut rng, logits)?;
                let out = pass.output.clone().reshape(&[1, classes])?;
                if out.argmax() == *label {
                    correct += 1;
                }
                let loss = cross_entropy_loss(&out, &[*label])?;
                total += loss.value as f64;
                let grad = loss.gradient.reshape(pass.output.shape())?;
                let back = model.backward(pass, &grad, false)?;
                accumulate(&mut acc, back.grads)?;
            }
            opt.step(&mut model, &mut acc, 1.0 / batch.len() as f32)?;
        }
        let n = data.len().max(1) as f64;
        let mean = total / n;
        check_loss(mean, epoch + 1)?;
        history.losses.push(mean);
        history.metrics.push(correct as f64 / n);
        if should_stop(&history.losses, cfg.patience) {
            break;
        }
    }
    history.train_seconds = start.elapsed().as_secs_f64();
    if !model.all_params_finite() {
        return Err(Error::Divergence { epoch: history.epochs() });
    }
    model.mark_trained();
    Ok((model, history))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub seconds: f64,
}

/// Fraction of samples whose argmax prediction equals the label; inference mode.
pub fn evaluate(model: &Model, data: &LabeledDataset) -> Result<Evaluation> {
    check_classifier_data(model, data)?;
    let start = Instant::now();
    let mut correct = 0usize;
    for (x, label) in &data.samples {
        if model.predict(x)? == *label {
            correct += 1;
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let accuracy = if data.is_empty() { 0.0 } else { correct as f64 / data.len() as f64 };
    Ok(Evaluation { accuracy, seconds })
}

/// Pretrain the stand-in convolutional base as a classifier on `data` and return
/// just its feature-extractor layers.
pub fn pretrain_base(base: ModelSpec, data: &LabeledDataset, cfg: &TrainConfig) -> Result<Model> {
    let n_base = base.layers.len();
    let mut layers = base.layers.clone();
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::dense(data.num_classes, crate::nn::ActivationKind::Softmax));
    let spec = ModelSpec::new(Role::Classifier, &base.input_shape, layers);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xBA5E);
    let (trained, _) = train_classifier(Model::init(spec, &mut rng)?, data, cfg)?;
    let (features, _) = trained.split_at(n_base)?;
    let mut spec = features.spec().clone();
    spec.role = Role::Base;
    Model::from_parts(spec, features.params().to_vec(), true)
}

/// Pretrained base plus a freshly initialized dense head, base frozen.
pub fn assemble_transfer<R: Rng + ?Sized>(base: &Model, head_width: usize, num_classes: usize, rng: &mut R) -> Result<Model> {
    let spec = build_transfer_model(base.spec(), head_width, num_classes)?;
    let shapes = spec.shapes()?;
    let mut params = base.params().to_vec();
    let n = base.spec().layers.len();
    for (i, layer) in spec.layers.iter().enumerate().skip(n) {
        params.push(layer.param_shapes(&shapes[i - 1]).map(|(w, b)| LayerParams {
            weights: Arc::new(glorot_uniform(&w, rng)),
            bias: Arc::new(Tensor::zeros(&b)),
        }));
    }
    Model::from_parts(spec, params, false)
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub model: Model,
    pub stage1: TrainHistory,
    pub stage2: TrainHistory,
}

/// Stage one: train only the head with adam while the base stays frozen.
pub fn transfer_stage_one(model: Model, data: &LabeledDataset, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    if model.spec().frozen_prefix == 0 {
        return Err(Error::UnfrozenBase);
    }
    if !matches!(cfg.optimizer, OptimizerConfig::Adam { .. }) {
        return Err(Error::Config(format!("stage one uses adam, got {}", cfg.optimizer.name())));
    }
    let base_before = base_fingerprint(&model);
    let (model, history) = train_classifier(model, data, cfg)?;
    debug_assert_eq!(base_fingerprint(&model), base_before);
    Ok((model, history))
}

/// Stage two: unfreeze everything and fine-tune with sgd-momentum.
pub fn transfer_stage_two(mut model: Model, data: &LabeledDataset, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    if !matches!(cfg.optimizer, OptimizerConfig::SgdMomentum { .. }) {
        return Err(Error::Config(format!("stage two uses sgd-momentum, got {}", cfg.optimizer.name())));
    }
    model.set_frozen_prefix(0);
    train_classifier(model, data, cfg)
}

pub fn two_stage_transfer_train(
    model: Model,
    data: &LabeledDataset,
    stage1: &TrainConfig,
    stage2: &TrainConfig,
) -> Result<TransferOutcome> {
    let (model, h1) = transfer_stage_one(model, data, stage1)?;
    let (model, h2) = transfer_stage_two(model, data, stage2)?;
    Ok(TransferOutcome { model, stage1: h1, stage2: h2 })
}

/// Fingerprint of the frozen prefix layers only.
pub fn base_fingerprint(model: &Model) -> u64 {
    let n = model.spec().frozen_prefix;
    model.split_at(n).map(|(base, _)| base.fingerprint()).unwrap_or(0)
}
