use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::ratio::{compression_ratio, CompressionRatio};
use super::spec::{LayerSpec, ModelSpec, Role};
use crate::error::{Error, Result};
use crate::nn::{ActivationKind, Padding};

pub const DEFAULT_HIDDEN_WIDTH: usize = 32;

/// Encoder/decoder architecture pair for one compression ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderSpec {
    pub encoder: ModelSpec,
    pub decoder: ModelSpec,
    /// Number of pool (encoder) / upsample (decoder) stages.
    pub stages: u32,
    pub latent_shape: Vec<usize>,
    pub achieved: Ratio<u64>,
}

/// Build the smallest-stage conv/pool/upsample autoencoder whose latent is exactly
/// `cr` times smaller than `input_shape`. A ratio of 1 yields empty (identity) models.
pub fn build_autoencoder(
    input_shape: &[usize],
    cr: CompressionRatio,
    hidden_width: usize,
) -> Result<AutoencoderSpec> {
    let &[h, w, c] = input_shape else {
        return Err(Error::ShapeMismatch(format!("autoencoder input must be HxWxC, got {input_shape:?}")));
    };
    let unachievable = || Error::UnachievableRatio { shape: input_shape.to_vec(), ratio: cr.to_string() };
    if cr.is_baseline() {
        return Ok(AutoencoderSpec {
            encoder: ModelSpec::new(Role::Encoder, input_shape, vec![]),
            decoder: ModelSpec::new(Role::Decoder, input_shape, vec![]),
            stages: 0,
            latent_shape: input_shape.to_vec(),
            achieved: Ratio::from_integer(1),
        });
    }
    if cr.ratio() < Ratio::from_integer(1) || hidden_width == 0 {
        return Err(unachievable());
    }

    let mut found = None;
    let mut s = 1u32;
    while let Some(side) = 1usize.checked_shl(s).filter(|&side| side <= h.min(w)) {
        if h % side == 0 && w % side == 0 {
            let channels = Ratio::from_integer((c * side * side) as u64) / cr.ratio();
            if channels.is_integer() && *channels.numer() > 0 {
                found = Some((s, side, *channels.numer() as usize));
                break;
            }
        }
        s += 1;
    }
    let (stages, side, latent_channels) = found.ok_or_else(unachievable)?;
    let latent_shape = vec![h / side, w / side, latent_channels];

    let mut enc = Vec::new();
    for _ in 0..stages {
        enc.push(LayerSpec::conv(3, hidden_width, Padding::Same, ActivationKind::Relu));
        enc.push(LayerSpec::Maxpool { pool: 2, stride: 2 });
    }
    enc.push(LayerSpec::conv(3, latent_channels, Padding::Same, ActivationKind::Relu));

    let mut dec = Vec::new();
    for _ in 0..stages {
        dec.push(LayerSpec::conv(3, hidden_width, Padding::Same, ActivationKind::Relu));
        dec.push(LayerSpec::Upsample { factor: 2 });
    }
    dec.push(LayerSpec::conv(3, c, Padding::Same, ActivationKind::Sigmoid));

    let encoder = ModelSpec::new(Role::Encoder, input_shape, enc);
    let decoder = ModelSpec::new(Role::Decoder, &latent_shape, dec);
    debug_assert_eq!(encoder.output_shape()?, latent_shape);
    debug_assert_eq!(decoder.output_shape()?, input_shape);
    let achieved = compression_ratio(input_shape, &latent_shape);
    if achieved != cr.ratio() {
        return Err(unachievable());
    }
    Ok(AutoencoderSpec { encoder, decoder, stages, latent_shape, achieved })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Three valid-padded conv/pool blocks with a 64-wide dense layer.
    A,
    /// Two double-conv same-padded blocks with dropout and a 512-wide dense layer.
    B,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Self::A),
            "B" | "b" => Ok(Self::B),
            _ => Err(Error::Parse(format!("unknown classifier family `{s}`"))),
        }
    }
}

fn fits(blocks: &[LayerSpec], mut shape: Vec<usize>) -> Option<Vec<usize>> {
    for layer in blocks {
        shape = layer.output_shape(&shape).ok()?;
    }
    Some(shape)
}

/// Vanilla classifier for `input_shape`. Trailing conv/pool blocks that would not
/// fit the input are dropped, so the same family serves small latent inputs.
pub fn build_vanilla_classifier(
    input_shape: &[usize],
    family: Family,
    num_classes: usize,
    pool_stride: usize,
) -> Result<ModelSpec> {
    let &[h, w, _] = input_shape else {
        return Err(Error::ShapeMismatch(format!("classifier input must be HxWxC, got {input_shape:?}")));
    };
    if h < 3 || w < 3 {
        return Err(Error::InvalidGeometry { layer: Some(0), reason: format!("{h}x{w} input is below 3x3") });
    }
    if num_classes == 0 {
        return Err(Error::Config("classifier needs at least one class".into()));
    }
    let pool = LayerSpec::Maxpool { pool: 2, stride: pool_stride };
    let relu = ActivationKind::Relu;
    let (blocks, dense_width): (Vec<Vec<LayerSpec>>, usize) = match family {
        Family::A => (vec![vec![LayerSpec::conv(3, 32, Padding::Valid, relu), pool.clone()]; 3], 64),
        Family::B => (
            [32, 64]
                .iter()
                .map(|&f| {
                    vec![
                        LayerSpec::conv(3, f, Padding::Same, relu),
                        LayerSpec::conv(3, f, Padding::Same, relu),
                        pool.clone(),
                        LayerSpec::Dropout { rate: 0.25 },
                    ]
                })
                .collect(),
            512,
        ),
    };

    let mut layers = Vec::new();
    let mut shape = input_shape.to_vec();
    for block in &blocks {
        match fits(block, shape.clone()) {
            Some(next) => {
                layers.extend(block.iter().cloned());
                shape = next;
            }
            None => break,
        }
    }
    if layers.is_empty() {
        return Err(Error::InvalidGeometry {
            layer: Some(0),
            reason: format!("first {family:?} block does not fit {input_shape:?}"),
        });
    }
    let features: usize = shape.iter().product();
    if features < num_classes {
        return Err(Error::InvalidGeometry {
            layer: Some(layers.len()),
            reason: format!("{features} features cannot feed {num_classes} classes"),
        });
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::dense(dense_width, relu));
    layers.push(LayerSpec::Dropout { rate: 0.5 });
    layers.push(LayerSpec::dense(num_classes, ActivationKind::Softmax));
    Ok(ModelSpec::new(Role::Classifier, input_shape, layers))
}

/// Frozen base followed by a two-layer dense head.
pub fn build_transfer_model(base: &ModelSpec, head_width: usize, num_classes: usize) -> Result<ModelSpec> {
    if base.layers.is_empty() || !base.layers.iter().any(LayerSpec::is_parametric) {
        return Err(Error::IncompatibleBase("base has no trainable feature layers".into()));
    }
    if let Some(bad) = base.layers.iter().find(|l| matches!(l, LayerSpec::Dense { .. } | LayerSpec::Flatten)) {
        return Err(Error::IncompatibleBase(format!("base must end in a feature map, found {}", bad.kind())));
    }
    let features = base.output_shape().map_err(|e| Error::IncompatibleBase(e.to_string()))?;
    if features.len() != 3 {
        return Err(Error::IncompatibleBase(format!("base output {features:?} is not a feature map")));
    }
    if num_classes == 0 || head_width < num_classes {
        return Err(Error::Config(format!("head width {head_width} must be >= {num_classes} classes")));
    }
    let mut layers = base.layers.clone();
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::dense(head_width, ActivationKind::Relu));
    layers.push(LayerSpec::dense(num_classes, ActivationKind::Softmax));
    let mut spec = ModelSpec::new(Role::Classifier, &base.input_shape, layers);
    spec.frozen_prefix = base.layers.len();
    Ok(spec)
}

/// Small convolutional feature extractor used as the pretrained transfer base.
pub fn standin_base(input_shape: &[usize]) -> ModelSpec {
    ModelSpec::new(
        Role::Base,
        input_shape,
        vec![
            LayerSpec::conv(3, 16, Padding::Same, ActivationKind::Relu),
            LayerSpec::Maxpool { pool: 2, stride: 2 },
            LayerSpec::conv(3, 32, Padding::Same, ActivationKind::Relu),
            LayerSpec::Maxpool { pool: 2, stride: 2 },
        ],
    )
}
