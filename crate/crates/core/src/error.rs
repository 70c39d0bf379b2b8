use thiserror::Error;

use crate::hub::wire::WireError;
use crate::hub::Ack;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid geometry{}: {reason}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    InvalidGeometry { layer: Option<usize>, reason: String },

    #[error("unknown activation kind `{0}`")]
    UnknownActivation(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("layer cache missing or already consumed")]
    MissingCache,

    #[error("compression ratio {ratio} is unachievable for input shape {shape:?}")]
    UnachievableRatio { shape: Vec<usize>, ratio: String },

    #[error("model has not been trained")]
    Untrained,

    #[error("incompatible transfer base: {0}")]
    IncompatibleBase(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("base layers must be frozen during stage one")]
    UnfrozenBase,

    #[error("device {0} has not been fitted")]
    NotFitted(u32),

    #[error("cannot partition {samples} samples across {devices} devices")]
    TooManyDevices { devices: usize, samples: usize },

    #[error("no decoder registered for device {0}")]
    MissingDecoder(u32),

    #[error("hub has no trained classifier")]
    NoClassifier,

    #[error("latent store holds heterogeneous shapes: {first:?} vs {other:?}")]
    HeterogeneousShapes { first: Vec<u32>, other: Vec<u32> },

    #[error("sink rejected record after {emitted} emitted: {reason}")]
    Sink { emitted: usize, reason: String },

    #[error("hub rejected record: {0:?}")]
    Rejected(Ack),

    #[error("no cr=1 baseline row for dataset `{dataset}` seed {seed}")]
    MissingBaseline { dataset: String, seed: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Wire(#[from] WireError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
