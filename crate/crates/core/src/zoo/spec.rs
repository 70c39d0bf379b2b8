use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{conv_geometry, pool_extent};
use crate::nn::{ActivationKind, Padding};

pub const SPEC_VERSION: u32 = 1;

/// One layer of a sequential architecture with its geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        kernel: usize,
        filters: usize,
        stride: usize,
        padding: Padding,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        activation: Option<ActivationKind>,
    },
    Maxpool {
        pool: usize,
        stride: usize,
    },
    Upsample {
        factor: usize,
    },
    Dense {
        width: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        activation: Option<ActivationKind>,
    },
    Activation {
        activation: ActivationKind,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
}

impl LayerSpec {
    pub fn conv(kernel: usize, filters: usize, padding: Padding, activation: ActivationKind) -> Self {
        Self::Conv2d { kernel, filters, stride: 1, padding, activation: Some(activation) }
    }

    pub fn dense(width: usize, activation: ActivationKind) -> Self {
        Self::Dense { width, activation: Some(activation) }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Conv2d { .. } => "conv2d",
            Self::Maxpool { .. } => "maxpool",
            Self::Upsample { .. } => "upsample",
            Self::Dense { .. } => "dense",
            Self::Activation { .. } => "activation",
            Self::Dropout { .. } => "dropout",
            Self::Flatten => "flatten",
        }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self, Self::Conv2d { .. } | Self::Dense { .. })
    }

    /// Output shape of this layer for `input`, or a reason it does not fit.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        let spatial = || match input {
            [h, w, c] => Ok((*h, *w, *c)),
            _ => Err(format!("{} needs an HxWxC input, got {input:?}", self.kind())),
        };
        match *self {
            Self::Conv2d { kernel, filters, stride, padding, .. } => {
                let (h, w, _) = spatial()?;
                if filters == 0 {
                    return Err("conv needs at least one filter".into());
                }
                let g = conv_geometry(h, w, kernel, stride, padding).map_err(|e| e.to_string())?;
                Ok(vec![g.out_h, g.out_w, filters])
            }
            Self::Maxpool { pool, stride } => {
                let (h, w, c) = spatial()?;
                match (pool_extent(h, pool, stride), pool_extent(w, pool, stride)) {
                    (Some(oh), Some(ow)) => Ok(vec![oh, ow, c]),
                    _ => Err(format!("{pool}x{pool} pool with stride {stride} does not fit {h}x{w}")),
                }
            }
            Self::Upsample { factor } => {
                let (h, w, c) = spatial()?;
                if factor == 0 {
                    return Err("upsample factor must be >= 1".into());
                }
                Ok(vec![h * factor, w * factor, c])
            }
            Self::Dense { width, .. } => match input {
                [_] if width > 0 => Ok(vec![width]),
                [_] => Err("dense width must be >= 1".into()),
                _ => Err(format!("dense needs a flat input, got {input:?}")),
            },
            Self::Activation { .. } => Ok(input.to_vec()),
            Self::Dropout { rate } => {
                if (0.0..1.0).contains(&rate) {
                    Ok(input.to_vec())
                } else {
                    Err(format!("dropout rate {rate} outside [0, 1)"))
                }
            }
            Self::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Weight and bias shapes for parametric layers.
    pub fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            Self::Conv2d { kernel, filters, .. } => {
                Some((vec![kernel, kernel, input[2], filters], vec![filters]))
            }
            Self::Dense { width, .. } => Some((vec![input[0], width], vec![width])),
            _ => None,
        }
    }

    pub fn parameter_count(&self, input: &[usize]) -> usize {
        match *self {
            Self::Conv2d { kernel, filters, .. } => (kernel * kernel * input[2] + 1) * filters,
            Self::Dense { width, .. } => (input[0] + 1) * width,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Encoder,
    Decoder,
    Classifier,
    Base,
    Head,
}

/// An ordered architecture with its declared input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub version: u32,
    pub role: Role,
    pub input_shape: Vec<usize>,
    /// Layers `[0, frozen_prefix)` receive no parameter updates.
    #[serde(default)]
    pub frozen_prefix: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(role: Role, input_shape: &[usize], layers: Vec<LayerSpec>) -> Self {
        Self { version: SPEC_VERSION, role, input_shape: input_shape.to_vec(), frozen_prefix: 0, layers }
    }

    pub fn is_frozen(&self, layer: usize) -> bool {
        layer < self.frozen_prefix
    }

    /// Per-layer output shapes for the declared input.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        infer_shapes(self, &self.input_shape)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.shapes()?.pop().expect("shape walk is never empty"))
    }

    pub fn parameter_count(&self) -> Result<usize> {
        count_parameters(self, &self.input_shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SPEC_VERSION {
            return Err(Error::Parse(format!("unsupported model spec version {}", self.version)));
        }
        if self.frozen_prefix > self.layers.len() {
            return Err(Error::Config(format!(
                "frozen prefix {} exceeds {} layers",
                self.frozen_prefix,
                self.layers.len()
            )));
        }
        self.shapes().map(|_| ())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Shape walk over `spec` starting at `input_shape`: one output shape per layer,
/// or just the input when the spec is empty.
pub fn infer_shapes(spec: &ModelSpec, input_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(Error::InvalidGeometry { layer: None, reason: format!("invalid input shape {input_shape:?}") });
    }
    if spec.layers.is_empty() {
        return Ok(vec![input_shape.to_vec()]);
    }
    let mut current = input_shape.to_vec();
    let mut out = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        current = layer
            .output_shape(&current)
            .map_err(|reason| Error::InvalidGeometry { layer: Some(i), reason })?;
        out.push(current.clone());
    }
    Ok(out)
}

pub fn count_parameters(spec: &ModelSpec, input_shape: &[usize]) -> Result<usize> {
    let shapes = infer_shapes(spec, input_shape)?;
    let mut input = input_shape.to_vec();
    let mut total = 0;
    for (layer, out) in spec.layers.iter().zip(shapes) {
        total += layer.parameter_count(&input);
        input = out;
    }
    Ok(total)
}
