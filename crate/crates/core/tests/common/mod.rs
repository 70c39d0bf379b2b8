//! Helpers shared by the integration suites and the acceptance runner.
#![allow(dead_code)]

use std::sync::Arc;

use latentwire::nn::layers::{self, ActivationKind, Padding};
use latentwire::nn::{cross_entropy_loss, mse_loss, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const ORACLE_TOLERANCE: f64 = 1e-12;
/// Gradients smaller than this are compared absolutely.
const REL_FLOOR: f64 = 1e-3;
/// Coordinates checked per tensor; small tensors are checked exhaustively.
const FD_COORDS: usize = 24;

pub type T64 = Tensor<f64>;

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> T64 {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero so no ReLU kink sits inside the FD step.
pub fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> T64 {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random() { v } else { -v }
    })
}

/// Distinct values spaced 0.01 apart so pooling windows never tie within the FD step.
pub fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> T64 {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - n as f64 * 0.005).collect();
    vals.shuffle(rng);
    Tensor::new(shape.to_vec(), vals).unwrap()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn coords(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= FD_COORDS {
        (0..n).collect()
    } else {
        (0..FD_COORDS).map(|_| rng.random_range(0..n)).collect()
    }
}

/// Max relative error between `analytic` and central differences of `f` around `x`.
pub fn fd_compare(x: &T64, analytic: &T64, rng: &mut ChaCha8Rng, f: impl Fn(&T64) -> f64) -> f64 {
    assert_eq!(x.shape(), analytic.shape());
    let mut worst: f64 = 0.0;
    for i in coords(x.len(), rng) {
        let mut plus = x.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= FD_STEP;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    worst
}

fn dot(a: &T64, b: &T64) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Every layer kind the engine implements, plus the two losses.
pub const GRAD_KINDS: [&str; 11] = [
    "conv2d", "maxpool", "upsample", "dense", "relu", "sigmoid", "softmax", "dropout", "flatten", "mse", "cross_entropy",
];

/// One randomized gradient check; returns the worst relative error across the
/// input gradient and any parameter gradients.
pub fn grad_case(kind: &str, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(2..7);
    let w = rng.random_range(2..7);
    let c = rng.random_range(1..4);
    match kind {
        "conv2d" => {
            let k = if h.min(w) >= 3 && rng.random() { 3 } else { rng.random_range(1..=h.min(w).min(2)) };
            let f = rng.random_range(1..4);
            let stride = rng.random_range(1..3);
            let padding = if rng.random() { Padding::Same } else { Padding::Valid };
            let x = random(&[h, w, c], &mut rng);
            let wt = random(&[k, k, c, f], &mut rng);
            let b = random(&[f], &mut rng);
            let run = |x: &T64, wt: &T64, b: &T64| layers::conv2d(x, &Arc::new(wt.clone()), b, stride, padding).unwrap();
            let (out, cache) = run(&x, &wt, &b);
            let up = random(out.shape(), &mut rng);
            let (dx, grads) = layers::backward(cache, &up).unwrap();
            let grads = grads.unwrap();
            let e1 = fd_compare(&x, &dx, &mut rng, |x| dot(&run(x, &wt, &b).0, &up));
            let e2 = fd_compare(&wt, &grads.weights, &mut rng, |wt| dot(&run(&x, wt, &b).0, &up));
            let e3 = fd_compare(&b, &grads.bias, &mut rng, |b| dot(&run(&x, &wt, b).0, &up));
            e1.max(e2).max(e3)
        }
        "maxpool" => {
            let pool = rng.random_range(1..=h.min(w).min(3));
            let stride = rng.random_range(1..3);
            let x = distinct(&[h, w, c], &mut rng);
            let (out, cache) = layers::maxpool2d(&x, pool, stride).unwrap();
            let up = random(out.shape(), &mut rng);
            let (dx, _) = layers::backward(cache, &up).unwrap();
            fd_compare(&x, &dx, &mut rng, |x| dot(&layers::maxpool2d(x, pool, stride).unwrap().0, &up))
        }
        "upsample" => {
            let factor = rng.random_range(1..4);
            let x = random(&[h, w, c], &mut rng);
            let (out, cache) = layers::upsample2d(&x, factor).unwrap();
            let up = random(out.shape(), &mut rng);
            let (dx, _) = layers::backward(cache, &up).unwrap();
            fd_compare(&x, &dx, &mut rng, |x| dot(&layers::upsample2d(x, factor).unwrap().0, &up))
        }
        "dense" => {
            let (n, m) = (rng.random_range(1..20), rng.random_range(1..12));
            let x = random(&[n], &mut rng);
            let wt = random(&[n, m], &mut rng);
            let b = random(&[m], &mut rng);
            let run = |x: &T64, wt: &T64, b: &T64| layers::dense(x, &Arc::new(wt.clone()), b).unwrap();
            let (out, cache) = run(&x, &wt, &b);
            let up = random(out.shape(), &mut rng);
            let (dx, grads) = layers::backward(cache, &up).unwrap();
            let grads = grads.unwrap();
            let e1 = fd_compare(&x, &dx, &mut rng, |x| dot(&run(x, &wt, &b).0, &up));
            let e2 = fd_compare(&wt, &grads.weights, &mut rng, |wt| dot(&run(&x, wt, &b).0, &up));
            let e3 = fd_compare(&b, &grads.bias, &mut rng, |b| dot(&run(&x, &wt, b).0, &up));
            e1.max(e2).max(e3)
        }
        "relu" | "sigmoid" | "softmax" => {
            let act: ActivationKind = kind.parse().unwrap();
            let x = if act == ActivationKind::Relu { away_from_zero(&[h, w, c], &mut rng) } else { random(&[h, w, c], &mut rng).map(|v| v * 3.0) };
            let (out, cache) = layers::activation(&x, act).unwrap();
            let up = random(out.shape(), &mut rng);
            let (dx, _) = layers::backward(cache, &up).unwrap();
            fd_compare(&x, &dx, &mut rng, |x| dot(&layers::activation(x, act).unwrap().0, &up))
        }
        "dropout" => {
            let rate = rng.random_range(0.0..0.9);
            let mask_seed: u64 = rng.random();
            let x = random(&[h, w, c], &mut rng);
            let run = |x: &T64| layers::dropout(x, rate, &mut ChaCha8Rng::seed_from_u64(mask_seed), true).unwrap();
            let (out, cache) = run(&x);
            let up = random(out.shape(), &mut rng);
            let (dx, _) = layers::backward(cache, &up).unwrap();
            fd_compare(&x, &dx, &mut rng, |x| dot(&run(x).0, &up))
        }
        "flatten" => {
            let x = random(&[h, w, c], &mut rng);
            let (out, cache) = layers::flatten(&x).unwrap();
            let up = random(out.shape(), &mut rng);
            let (dx, _) = layers::backward(cache, &up).unwrap();
            fd_compare(&x, &dx, &mut rng, |x| dot(&layers::flatten(x).unwrap().0, &up))
        }
        "mse" => {
            let shape = [h, w, c];
            let (p, t) = (random(&shape, &mut rng), random(&shape, &mut rng));
            let g = mse_loss(&p, &t).unwrap().gradient;
            fd_compare(&p, &g, &mut rng, |p| mse_loss(p, &t).unwrap().value)
        }
        "cross_entropy" => {
            let (batch, classes) = (rng.random_range(1..5), rng.random_range(2..8));
            let z = random(&[batch, classes], &mut rng).map(|v| v * 4.0);
            let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
            let g = cross_entropy_loss(&z, &labels).unwrap().gradient;
            fd_compare(&z, &g, &mut rng, |z| cross_entropy_loss(z, &labels).unwrap().value)
        }
        other => panic!("unknown layer kind {other}"),
    }
}

/// Direct transcription of the convolution definition with explicit padding offsets.
pub fn naive_conv(x: &T64, wt: &T64, b: &T64, stride: usize, padding: Padding) -> T64 {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (k, f) = (wt.shape()[0], wt.shape()[3]);
    let (oh, ow, pt, pl) = match padding {
        Padding::Valid => ((h - k) / stride + 1, (w - k) / stride + 1, 0i64, 0i64),
        Padding::Same => {
            let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
            let ph = ((oh - 1) * stride + k).saturating_sub(h);
            let pw = ((ow - 1) * stride + k).saturating_sub(w);
            (oh, ow, (ph / 2) as i64, (pw / 2) as i64)
        }
    };
    let at = |t: &T64, idx: &[usize]| {
        let s = t.shape();
        let flat = idx.iter().zip(s).fold(0, |acc, (i, d)| acc * d + i);
        t.data()[flat]
    };
    Tensor::from_fn(&[oh, ow, f], |flat| {
        let (i, j, fo) = (flat / (ow * f), (flat / f) % ow, flat % f);
        let mut s = b.data()[fo];
        for di in 0..k {
            for dj in 0..k {
                let (y, xx) = ((i * stride + di) as i64 - pt, (j * stride + dj) as i64 - pl);
                if y < 0 || xx < 0 || y >= h as i64 || xx >= w as i64 {
                    continue;
                }
                for ci in 0..c {
                    s += at(x, &[y as usize, xx as usize, ci]) * at(wt, &[di, dj, ci, fo]);
                }
            }
        }
        s
    })
}

pub fn naive_maxpool(x: &T64, pool: usize, stride: usize) -> T64 {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = ((h - pool) / stride + 1, (w - pool) / stride + 1);
    Tensor::from_fn(&[oh, ow, c], |flat| {
        let (i, j, ch) = (flat / (ow * c), (flat / c) % ow, flat % c);
        let mut best = f64::NEG_INFINITY;
        for di in 0..pool {
            for dj in 0..pool {
                best = best.max(x.data()[((i * stride + di) * w + j * stride + dj) * c + ch]);
            }
        }
        best
    })
}

pub fn naive_dense(x: &T64, wt: &T64, b: &T64) -> T64 {
    let (n, m) = (wt.shape()[0], wt.shape()[1]);
    Tensor::from_fn(&[m], |j| b.data()[j] + (0..n).map(|i| x.data()[i] * wt.data()[i * m + j]).sum::<f64>())
}

fn max_abs_diff(a: &T64, b: &T64) -> f64 {
    assert_eq!(a.shape(), b.shape(), "oracle shape mismatch");
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One random shape (<= 16x16x4) checked against all three oracles; returns the worst deviation.
pub fn oracle_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=4));
    let x = random(&[h, w, c], &mut rng);
    let mut worst: f64 = 0.0;

    let k = rng.random_range(1..=h.min(w).min(5));
    let f = rng.random_range(1..=4);
    let stride = rng.random_range(1..=3);
    let padding = if rng.random() { Padding::Same } else { Padding::Valid };
    let wt = random(&[k, k, c, f], &mut rng);
    let b = random(&[f], &mut rng);
    let (out, _) = layers::conv2d(&x, &Arc::new(wt.clone()), &b, stride, padding).unwrap();
    worst = worst.max(max_abs_diff(&out, &naive_conv(&x, &wt, &b, stride, padding)));

    let pool = rng.random_range(1..=h.min(w).min(4));
    let pstride = rng.random_range(1..=3);
    let (out, _) = layers::maxpool2d(&x, pool, pstride).unwrap();
    worst = worst.max(max_abs_diff(&out, &naive_maxpool(&x, pool, pstride)));

    let n = x.len();
    let m = rng.random_range(1..=16);
    let flat = x.clone().reshape(&[n]).unwrap();
    let wt = random(&[n, m], &mut rng);
    let b = random(&[m], &mut rng);
    let (out, _) = layers::dense(&flat, &Arc::new(wt.clone()), &b).unwrap();
    worst.max(max_abs_diff(&out, &naive_dense(&flat, &wt, &b)))
}

/// Independent parameter recount: walks shapes by hand from the layer list.
pub fn recount_parameters(spec: &latentwire::ModelSpec) -> usize {
    use latentwire::LayerSpec;
    let mut shape = spec.input_shape.clone();
    let mut total = 0;
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv2d { kernel, filters, stride, padding, .. } => {
                total += (kernel * kernel * shape[2] + 1) * filters;
                let (h, w) = match padding {
                    Padding::Valid => ((shape[0] - kernel) / stride + 1, (shape[1] - kernel) / stride + 1),
                    Padding::Same => (shape[0].div_ceil(*stride), shape[1].div_ceil(*stride)),
                };
                shape = vec![h, w, *filters];
            }
            LayerSpec::Maxpool { pool, stride } => {
                shape = vec![(shape[0] - pool) / stride + 1, (shape[1] - pool) / stride + 1, shape[2]];
            }
            LayerSpec::Upsample { factor } => shape = vec![shape[0] * factor, shape[1] * factor, shape[2]],
            LayerSpec::Dense { width, .. } => {
                total += (shape[0] + 1) * width;
                shape = vec![*width];
            }
            LayerSpec::Flatten => shape = vec![shape.iter().product()],
            LayerSpec::Activation { .. } | LayerSpec::Dropout { .. } => {}
        }
    }
    total
}

pub const EXACT_RATIO_CASES: [(&[usize], u64); 4] =
    [(&[32, 32, 3], 4), (&[32, 32, 3], 8), (&[32, 32, 3], 16), (&[256, 256, 3], 4)];

/// Achieved ratio and per-sample wire payload for each exactness case. Returns
/// one message per violation.
pub fn compression_violations() -> Vec<String> {
    use latentwire::zoo::{build_autoencoder, compression_ratio};
    use latentwire::{CompressionRatio, LatentRecord};
    let mut bad = Vec::new();
    for (shape, cr) in EXACT_RATIO_CASES {
        let ae = build_autoencoder(shape, CompressionRatio::integer(cr).unwrap(), 4).unwrap();
        let latent = ae.encoder.output_shape().unwrap();
        if compression_ratio(shape, &latent) != num_rational::Ratio::from_integer(cr) {
            bad.push(format!("{shape:?} cr {cr}: achieved {}", compression_ratio(shape, &latent)));
        }
        let n: usize = latent.iter().product();
        let record =
            LatentRecord::new(0, 0, 0, latent.iter().map(|&d| d as u32).collect(), vec![0.5; n]).unwrap();
        let raw_bytes = 4 * shape.iter().product::<usize>();
        if record.payload_bytes() as u64 * cr != raw_bytes as u64 {
            bad.push(format!("{shape:?} cr {cr}: {} payload bytes for {raw_bytes} raw", record.payload_bytes()));
        }
    }
    bad
}

/// Vanilla classifier parameter counts over `ratios` for the latents of a
/// 32x32x3 input, each checked against the recount oracle.
pub fn family_counts(family: latentwire::Family, pool_stride: usize, ratios: &[u64]) -> Vec<usize> {
    use latentwire::zoo::{build_autoencoder, build_vanilla_classifier, count_parameters};
    use latentwire::CompressionRatio;
    ratios
        .iter()
        .map(|&cr| {
            let latent = build_autoencoder(&[32, 32, 3], CompressionRatio::integer(cr).unwrap(), 8).unwrap().latent_shape;
            let spec = build_vanilla_classifier(&latent, family, 10, pool_stride).unwrap();
            let counted = count_parameters(&spec, &latent).unwrap();
            assert_eq!(counted, recount_parameters(&spec), "{family:?} cr {cr}");
            counted
        })
        .collect()
}

/// A seconds-scale experiment config on a small synthetic set.
pub fn tiny_experiment() -> latentwire::bench::ExperimentConfig {
    use latentwire::bench::{DatasetSource, ExperimentConfig, SyntheticSpec};
    use latentwire::{CompressionRatio, TrainConfig};
    ExperimentConfig {
        dataset: DatasetSource::Synthetic(SyntheticSpec { samples_per_class: 24, ..Default::default() }),
        ratios: vec![CompressionRatio::BASELINE],
        devices: 2,
        hidden_width: 4,
        autoencoder: TrainConfig::autoencoder().with_epochs(1),
        classifier: TrainConfig::classifier().with_epochs(1).with_augment(false),
        seeds: vec![0],
        timing_repeats: 1,
        ..Default::default()
    }
}

pub struct Equivalence {
    pub served_accuracy: f64,
    pub local_accuracy: f64,
    pub served_hash: u64,
    pub local_hash: u64,
    pub records: usize,
}

/// Ship latents device -> TCP -> hub and train there; separately train the
/// same classifier in-process on latents collected straight from the devices.
pub fn pipeline_equivalence(cr: u64, seed: u64) -> Equivalence {
    use latentwire::bench::gen_synthetic;
    use latentwire::edge::CollectSink;
    use latentwire::hub::{ClassifierChoice, Server, WireClient};
    use latentwire::train::{train_classifier, Content};
    use latentwire::zoo::build_vanilla_classifier;
    use latentwire::{
        evaluate, partition_dataset, CompressionRatio, DeviceNode, Family, Hub, LabeledDataset, Model,
        PartitionMode, Split, TrainConfig,
    };

    let tiny = tiny_experiment();
    let latentwire::bench::DatasetSource::Synthetic(spec) = &tiny.dataset else { unreachable!() };
    let (train, test) = gen_synthetic(spec, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trains = partition_dataset(&train, 2, PartitionMode::Iid, &mut rng).unwrap();
    let tests = partition_dataset(&test, 2, PartitionMode::Iid, &mut rng).unwrap();
    let ratio = CompressionRatio::integer(cr).unwrap();
    let hub = Arc::new(Hub::new(train.num_classes));
    let server = Server::spawn(hub.clone(), "127.0.0.1:0").unwrap();
    let local = CollectSink::new();
    for (id, (tr, te)) in trains.into_iter().zip(tests).enumerate() {
        let mut device = DeviceNode::new(id as u32, tr, te);
        device.fit_autoencoder(ratio, 4, &tiny.autoencoder.clone().with_seed(seed)).unwrap();
        hub.register_decoder(device.id(), device.export_decoder().unwrap()).unwrap();
        let mut twin = device.clone();
        let client = WireClient::connect(server.local_addr()).unwrap();
        for split in [Split::Train, Split::Test] {
            device.export_latents(split, &client).unwrap();
            twin.export_latents(split, &local).unwrap();
        }
        client.finish().unwrap();
    }
    server.shutdown();

    let cfg: TrainConfig = tiny.classifier.clone().with_epochs(4).with_seed(seed);
    let choice = ClassifierChoice::Vanilla { family: Family::A, pool_stride: 1 };
    hub.train_classifier(&choice, &cfg).unwrap();
    let served = hub.classifier().unwrap();
    let (served_accuracy, _) = hub.accuracy(Split::Test).unwrap();

    let records = local.into_records();
    let split_set = |split: Split| {
        let samples = records
            .iter()
            .filter(|(_, s)| *s == split)
            .map(|(r, _)| (r.to_tensor().unwrap(), r.label as usize))
            .collect();
        LabeledDataset::new(samples, split, train.num_classes, Content::Latents).unwrap()
    };
    let (local_train, local_test) = (split_set(Split::Train), split_set(Split::Test));
    let spec = build_vanilla_classifier(local_train.sample_shape().unwrap(), Family::A, train.num_classes, 1).unwrap();
    let model = Model::init(spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let (model, _) = train_classifier(model, &local_train, &cfg).unwrap();
    Equivalence {
        served_accuracy,
        local_accuracy: evaluate(&model, &local_test).unwrap().accuracy,
        served_hash: served.fingerprint(),
        local_hash: model.fingerprint(),
        records: records.len(),
    }
}
